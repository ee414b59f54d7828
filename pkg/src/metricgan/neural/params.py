"""Named parameters, Adam state and spectral-norm vectors of one network."""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .tensor import NumericalError, Tensor

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


class ParamSet:
    """Everything that gets checkpointed for one network.

    ``params`` are the trainable leaves, ``m``/``v``/``step`` the Adam state,
    ``sn_u`` the power-iteration vectors and ``buffers`` any fixed arrays the
    network needs at inference time (e.g. feature normalization statistics).
    """

    def __init__(self, dtype=np.float32, meta: dict | None = None):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.sn_u: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.step = 0
        self.meta: dict = dict(meta or {})
        self.rng_state: dict | None = None

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        value = np.array(value, dtype=self.dtype)
        t = Tensor(value, requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def tensors(self) -> dict[str, Tensor]:
        return self.params

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def num_values(self) -> int:
        return sum(t.size for t in self.params.values())

    @contextmanager
    def frozen(self):
        """Treat the parameters as constants (no gradient bookkeeping) inside the block."""
        flags = {k: t.requires_grad for k, t in self.params.items()}
        for t in self.params.values():
            t.requires_grad = False
        try:
            yield self
        finally:
            for k, t in self.params.items():
                t.requires_grad = flags[k]

    def adam_step(self, grads: dict[str, np.ndarray], lr: float,
                  beta1: float = BETA1, beta2: float = BETA2, eps: float = EPSILON) -> "ParamSet":
        """One bias-corrected Adam update, in place. Returns ``self``."""
        self.step += 1
        bc1 = 1.0 - beta1 ** self.step
        bc2 = 1.0 - beta2 ** self.step
        for name, t in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(t.data)
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for parameter {name}")
            g = g.astype(self.dtype, copy=False)
            m, v = self.m[name], self.v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            update = (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(self.dtype, copy=False)
            t.data = t.data - update
        return self
