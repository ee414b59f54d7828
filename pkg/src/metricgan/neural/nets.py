"""Generator (context-window masking network) and discriminator (metric surrogate)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .layers import Conv2d, Dense
from .params import ParamSet
from .tensor import NumericalError, Tensor

LEAKY_SLOPE = 0.2


@dataclass
class GeneratorConfig:
    n_freq: int = 257
    context: int = 3
    hidden: tuple[int, ...] = (256, 256)
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.context < 0:
            raise ValueError("context radius must be >= 0")


# floor of the "log" compression; it is log(m + eps) up to the constant log(eps)
LOG_EPS = 1e-3
GAIN_EPS = 1e-12


@dataclass
class DiscriminatorConfig:
    channels: tuple[int, ...] = (8, 16)
    kernels: tuple[int, ...] = (5, 7)
    dense: tuple[int, ...] = (8,)
    slope: float = LEAKY_SLOPE
    spectral_norm: bool = True
    # magnitude compression before the first convolution: "log1p", "log" (log(m + LOG_EPS))
    # or "none" (raw)
    compression: str = "log1p"
    # rescale the evaluated spectrogram to the condition's energy first, so D
    # cannot score an utterance by its overall gain (STOI ignores gain too)
    gain_match: bool = False
    in_channels: int = field(default=2, init=False)

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.kernels = tuple(int(k) for k in self.kernels)
        self.dense = tuple(int(d) for d in self.dense)
        if len(self.channels) != len(self.kernels):
            raise ValueError("one kernel size per conv layer")
        if self.compression not in ("log1p", "log", "none"):
            raise ValueError(f"unknown compression {self.compression!r}")


def context_frames(x: np.ndarray, radius: int) -> np.ndarray:
    """Stack frames t-K..t+K (edge-replicated) along the feature axis.

    (B, T, F) -> (B, T, (2K+1)F)
    """
    if radius == 0:
        return x
    n = x.shape[1]
    padded = np.pad(x, ((0, 0), (radius, radius), (0, 0)), mode="edge")
    return np.concatenate([padded[:, k:k + n, :] for k in range(2 * radius + 1)], axis=2)


def _config_from_meta(cls, meta: dict):
    kwargs = {k: v for k, v in meta.items() if k in cls.__dataclass_fields__ and cls.__dataclass_fields__[k].init}
    return cls(**kwargs)


class GeneratorNet:
    def __init__(self, config: GeneratorConfig | None = None, seed: int = 0,
                 dtype=np.float32, params: ParamSet | None = None):
        self.config = config or GeneratorConfig()
        cfg = self.config
        rng = np.random.default_rng(seed)
        fresh = params is None
        self.params = ParamSet(dtype, meta={"kind": "generator", **asdict(cfg)}) if fresh else params
        # layers register into a scratch ParamSet when restoring, then bind to the loaded one
        target = self.params if fresh else ParamSet(self.params.dtype)
        sizes = [(2 * cfg.context + 1) * cfg.n_freq, *cfg.hidden, cfg.n_freq]
        self.layers = [Dense(target, f"g{i}", sizes[i], sizes[i + 1], rng) for i in range(len(sizes) - 1)]
        if not fresh:
            for layer in self.layers:
                layer.params = self.params
                for key in (f"{layer.name}.w", f"{layer.name}.b"):
                    if self.params[key].shape != target[key].shape:
                        raise ValueError(f"checkpoint shape mismatch for {key}")

    @classmethod
    def from_params(cls, params: ParamSet) -> "GeneratorNet":
        return cls(_config_from_meta(GeneratorConfig, params.meta), params=params)

    def forward(self, noisy_norm) -> Tensor:
        """Mask in (0, 1) with the shape of the (normalized) input, (T, F) or (B, T, F)."""
        x = np.asarray(noisy_norm)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.shape[-1] != self.config.n_freq:
            raise ValueError(f"generator expects {self.config.n_freq} bins, got {x.shape[-1]}")
        B, n, F = x.shape
        h = Tensor(context_frames(x, self.config.context).reshape(B * n, -1).astype(self.params.dtype))
        for layer in self.layers[:-1]:
            h = T.leaky_relu(layer(h), self.config.slope)
        h = T.sigmoid(self.layers[-1](h))
        h.check_finite("generator activation")
        out = h.reshape(B, n, F)
        return out.reshape(n, F) if squeeze else out

    __call__ = forward


class DiscriminatorNet:
    def __init__(self, config: DiscriminatorConfig | None = None, seed: int = 0,
                 dtype=np.float32, params: ParamSet | None = None):
        self.config = config or DiscriminatorConfig()
        cfg = self.config
        rng = np.random.default_rng(seed)
        fresh = params is None
        self.params = ParamSet(dtype, meta={"kind": "discriminator", **asdict(cfg)}) if fresh else params
        target = self.params if fresh else ParamSet(self.params.dtype)
        self.convs = []
        c_in = cfg.in_channels
        for i, (c, k) in enumerate(zip(cfg.channels, cfg.kernels)):
            self.convs.append(Conv2d(target, f"conv{i}", c_in, c, (k, k), rng, spectral=cfg.spectral_norm))
            c_in = c
        sizes = [c_in, *cfg.dense, 1]
        self.dense = [Dense(target, f"fc{i}", sizes[i], sizes[i + 1], rng, spectral=cfg.spectral_norm)
                      for i in range(len(sizes) - 1)]
        if not fresh:
            for layer in self.layers:
                layer.params = self.params
                if self.params[f"{layer.name}.w"].shape != target[f"{layer.name}.w"].shape:
                    raise ValueError(f"checkpoint shape mismatch for {layer.name}")

    @classmethod
    def from_params(cls, params: ParamSet) -> "DiscriminatorNet":
        return cls(_config_from_meta(DiscriminatorConfig, params.meta), params=params)

    @property
    def layers(self):
        return [*self.convs, *self.dense]

    @property
    def min_frames(self) -> int:
        return sum(k - 1 for k in self.config.kernels) + 1

    def forward(self, evaluated, condition, update_u: bool = False) -> Tensor:
        """One score per utterance pair.

        ``evaluated`` may be a Tensor (gradients flow back into it) or an array;
        ``condition`` is a constant. Shapes (T, F) or (B, T, F); returns (B,).
        """
        ev = evaluated if isinstance(evaluated, Tensor) else Tensor(np.asarray(evaluated))
        cond = np.asarray(condition)
        if ev.ndim == 2:
            ev = ev.reshape(1, *ev.shape)
        if cond.ndim == 2:
            cond = cond[None]
        if ev.shape != cond.shape:
            raise ValueError(f"evaluated {ev.shape} and condition {cond.shape} differ in shape")
        if ev.shape[1] < self.min_frames:
            raise ValueError(f"discriminator needs at least {self.min_frames} frames, got {ev.shape[1]}")
        dtype = self.params.dtype
        ev = T.cast(ev, dtype)
        cond = cond.astype(dtype)
        if self.config.gain_match:
            c_energy = np.mean(cond * cond, axis=(1, 2), keepdims=True)
            e_energy = T.tmean(ev * ev, axis=(1, 2), keepdims=True)
            ev = ev * T.div(np.sqrt(c_energy), T.sqrt(e_energy + GAIN_EPS))
        if self.config.compression == "log1p":
            ev = T.log1p(ev)
            cond = np.log1p(cond)
        elif self.config.compression == "log":
            ev = T.log1p(ev * (1.0 / LOG_EPS))
            cond = np.log1p(cond / LOG_EPS)
        x = T.concat([ev.reshape(*ev.shape, 1), Tensor(cond[..., None])], axis=3)
        for conv in self.convs:
            x = T.leaky_relu(conv(x, update_u), self.config.slope)
        h = x.mean(axis=(1, 2))
        for layer in self.dense[:-1]:
            h = T.leaky_relu(layer(h, update_u), self.config.slope)
        out = self.dense[-1](h, update_u)
        out.check_finite("discriminator activation")
        return out.reshape(-1)

    __call__ = forward
