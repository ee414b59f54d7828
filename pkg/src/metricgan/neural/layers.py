from __future__ import annotations

import numpy as np

from . import tensor as T
from .params import ParamSet

SIGMA_FLOOR = 1e-12


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _as_matrix(weight: np.ndarray) -> np.ndarray:
    # (out x rest) view: last axis of our weight layouts is the output axis
    return weight.reshape(-1, weight.shape[-1]).T


def _unit(x: np.ndarray) -> np.ndarray:
    return x / (np.linalg.norm(x) + SIGMA_FLOOR)


def power_iteration(weight: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """One power-iteration step on the (out x rest) view of ``weight``.

    Returns (new u, v, sigma estimate). A zero matrix leaves ``u`` unchanged.
    """
    w2 = _as_matrix(weight).astype(np.float64)
    v = w2.T @ u
    if np.linalg.norm(v) == 0.0:
        return u.copy(), np.zeros(w2.shape[1]), SIGMA_FLOOR
    v = _unit(v)
    u_new = w2 @ v
    if np.linalg.norm(u_new) == 0.0:
        return u.copy(), v, SIGMA_FLOOR
    u_new = _unit(u_new)
    sigma = max(float(u_new @ w2 @ v), SIGMA_FLOOR)
    return u_new, v, sigma


def spectral_normalize(weight: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (weight / sigma_hat, updated u) after one power-iteration step."""
    u_new, _, sigma = power_iteration(weight, u)
    return weight / sigma, u_new


def _sigma_tensor(w: T.Tensor, u: np.ndarray, v: np.ndarray) -> T.Tensor:
    # sigma = u^T W v = sum(W * (v u^T)) in the parameter's own layout, so the
    # gradient also flows through the normalizer
    outer = np.outer(v, u).reshape(w.shape).astype(w.data.dtype)
    return T.tsum(T.mul(w, outer))


class _Layer:
    def __init__(self, params: ParamSet, name: str, spectral: bool, rng: np.random.Generator):
        self.params = params
        self.name = name
        self.spectral = spectral
        if spectral:
            out = params[f"{name}.w"].shape[-1]
            params.sn_u[f"{name}.w"] = _unit(rng.standard_normal(out))

    @property
    def w(self) -> T.Tensor:
        return self.params[f"{self.name}.w"]

    @property
    def b(self) -> T.Tensor:
        return self.params[f"{self.name}.b"]

    def effective_weight(self, update_u: bool = False) -> T.Tensor:
        w = self.w
        if not self.spectral:
            return w
        key = f"{self.name}.w"
        u = self.params.sn_u[key]
        u_new, v, sigma = power_iteration(w.data, u)
        if update_u:
            self.params.sn_u[key] = u_new
        if sigma <= SIGMA_FLOOR:
            return T.div(w, SIGMA_FLOOR)
        return T.div(w, _sigma_tensor(w, u_new, v))

    def effective_weight_array(self) -> np.ndarray:
        return self.effective_weight(update_u=False).data


class Dense(_Layer):
    def __init__(self, params: ParamSet, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator, spectral: bool = False):
        params.add(f"{name}.w", glorot_uniform(rng, (n_in, n_out), n_in, n_out))
        params.add(f"{name}.b", np.zeros(n_out))
        super().__init__(params, name, spectral, rng)

    def __call__(self, x: T.Tensor, update_u: bool = False) -> T.Tensor:
        return T.add(T.matmul(x, self.effective_weight(update_u)), self.b)


class Conv2d(_Layer):
    """Valid stride-1 convolution, channels-last."""

    def __init__(self, params: ParamSet, name: str, c_in: int, c_out: int, kernel: tuple[int, int],
                 rng: np.random.Generator, spectral: bool = False):
        kh, kw = kernel
        params.add(f"{name}.w", glorot_uniform(rng, (kh, kw, c_in, c_out), kh * kw * c_in, kh * kw * c_out))
        params.add(f"{name}.b", np.zeros(c_out))
        self.kernel = (kh, kw)
        super().__init__(params, name, spectral, rng)

    def __call__(self, x: T.Tensor, update_u: bool = False) -> T.Tensor:
        return T.add(T.conv2d(x, self.effective_weight(update_u)), self.b)
