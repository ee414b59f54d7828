"""Generator and discriminator objectives.

All losses accept plain floats/arrays or :class:`Tensor` values (for
back-propagation); batched inputs are averaged over the batch.
"""
from __future__ import annotations

import numpy as np

from ..neural.tensor import Tensor


def _mean(x):
    return x.mean() if isinstance(x, Tensor) else float(np.mean(x))


def _values(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def l1(enhanced, clean):
    """Mean absolute difference of two magnitude spectrograms."""
    return _mean(abs(enhanced - clean))


def loss_g_cgan(d_out_on_fake, enhanced, clean, lam: float):
    """lam * (D(G(x), x) - 1)^2 + L1(G(x), y)."""
    return lam * _mean((d_out_on_fake - 1.0) ** 2) + l1(enhanced, clean)


def loss_d_cgan(d_real, d_fake):
    """(D(y, x) - 1)^2 + D(G(x), x)^2: constant labels 1 (clean) and 0 (generated)."""
    return _mean((d_real - 1.0) ** 2) + _mean((d_fake - 0.0) ** 2)


def loss_d_metricgan(d_clean, d_fake, q_fake):
    """(D(y, y) - 1)^2 + (D(G(x), y) - Q'(G(x), y))^2, the metric label is a constant."""
    q = _values(q_fake)
    if np.any(q < 0.0) or np.any(q > 1.0) or not np.all(np.isfinite(q)):
        raise ValueError(f"normalized metric score outside [0, 1]: {q}")
    if isinstance(d_fake, Tensor):
        q = q.astype(d_fake.data.dtype)
    return _mean((d_clean - 1.0) ** 2) + _mean((d_fake - q) ** 2)


def loss_g_metricgan(d_fake, s: float, mask=None, mu: float = 0.0):
    """(D(G(x), y) - s)^2, plus mu * mean((mask - 0.5)^2) when mu > 0."""
    loss = _mean((d_fake - s) ** 2)
    if mu > 0.0 and mask is not None:
        loss = loss + mu * _mean((mask - 0.5) ** 2)
    return loss


def loss_irm_l1(enhanced, clean):
    return l1(enhanced, clean)
