"""Inference bundle: a generator plus the feature statistics and DSP settings it was trained with."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..neural import GeneratorConfig, GeneratorNet, ParamSet, load_checkpoint, save_checkpoint
from ..neural.checkpoint import from_bytes, to_bytes
from ..signal import MASK_FLOOR, NormStats, Waveform, apply_mask, istft, normalize_spectrogram, stft
from .data import DSP


@dataclass
class Enhancer:
    generator: GeneratorNet
    stats: NormStats
    dsp: DSP
    floor: float = MASK_FLOOR

    def mask(self, noisy: Waveform) -> np.ndarray:
        spec = stft(noisy, self.dsp.n_fft, self.dsp.hop, self.dsp.window)
        with self.generator.params.frozen():
            return self.generator(normalize_spectrogram(spec.magnitude, self.stats)).data

    def enhance(self, noisy: Waveform) -> Waveform:
        spec = stft(noisy, self.dsp.n_fft, self.dsp.hop, self.dsp.window)
        with self.generator.params.frozen():
            m = self.generator(normalize_spectrogram(spec.magnitude, self.stats)).data
        return istft(apply_mask(spec, m, self.floor))

    def params(self) -> ParamSet:
        """The generator's ParamSet with statistics and DSP settings attached."""
        p = self.generator.params
        p.buffers["norm_mean"] = np.asarray(self.stats.mean, dtype=np.float64)
        p.buffers["norm_std"] = np.asarray(self.stats.std, dtype=np.float64)
        p.meta.update(n_fft=self.dsp.n_fft, hop=self.dsp.hop, window=self.dsp.window, mask_floor=self.floor)
        return p

    def to_bytes(self) -> bytes:
        return to_bytes(self.params())

    def save(self, path) -> Path:
        return save_checkpoint(self.params(), path)

    @classmethod
    def from_params(cls, params: ParamSet) -> "Enhancer":
        if params.meta.get("kind") != "generator":
            raise ValueError("checkpoint does not hold a generator")
        try:
            stats = NormStats(params.buffers["norm_mean"], params.buffers["norm_std"])
        except KeyError:
            raise ValueError("generator checkpoint lacks normalization statistics") from None
        m = params.meta
        dsp = DSP(int(m.get("n_fft", 512)), int(m.get("hop", 256)), str(m.get("window", "hann")))
        return cls(GeneratorNet.from_params(params), stats, dsp, float(m.get("mask_floor", MASK_FLOOR)))

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Enhancer":
        return cls.from_params(from_bytes(buf))

    @classmethod
    def load(cls, path) -> "Enhancer":
        return cls.from_params(load_checkpoint(path))


def identity_enhancer(dsp: DSP | None = None, config: GeneratorConfig | None = None) -> Enhancer:
    """Stub whose mask is exactly 1 everywhere: zero output weights and a saturating bias."""
    dsp = dsp or DSP()
    config = config or GeneratorConfig(n_freq=dsp.n_freq, hidden=(8,))
    gen = GeneratorNet(config, seed=0)
    last = gen.layers[-1]
    gen.params[f"{last.name}.w"].data[...] = 0.0
    gen.params[f"{last.name}.b"].data[...] = 40.0
    stats = NormStats(np.zeros(dsp.n_freq), np.ones(dsp.n_freq))
    return Enhancer(gen, stats, dsp)
