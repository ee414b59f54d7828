"""Framing, STFT/ISTFT, mask application, resampling, feature normalization and WAV I/O."""
from __future__ import annotations

import logging
import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import firwin, resample_poly

log = logging.getLogger(__name__)

N_FFT = 512
HOP = 256
WINDOW = "hann"
MASK_FLOOR = 0.05
SUPPORTED_RATES = (10000, 16000)

# windowed-sinc resampler
RESAMPLE_TAPS_PER_PHASE = 32
KAISER_BETA = 5.0


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("waveform must be mono (1-D)")
        if samples.size < 1:
            raise ValueError("waveform is empty")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample rate must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples ** 2)))


@dataclass(frozen=True)
class Spectrogram:
    """Complex (T, F) STFT plus what is needed to invert it."""

    coeffs: np.ndarray
    n_fft: int
    hop: int
    window: str
    length: int
    sample_rate: int

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.coeffs)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.coeffs)

    @property
    def shape(self) -> tuple[int, int]:
        return self.coeffs.shape

    def with_magnitude(self, magnitude: np.ndarray) -> "Spectrogram":
        """Same phase, new magnitude."""
        coeffs = magnitude * np.exp(1j * self.phase)
        return Spectrogram(coeffs, self.n_fft, self.hop, self.window, self.length, self.sample_rate)


def window_array(kind: str, n: int) -> np.ndarray:
    # periodic windows: these are the ones with exact overlap-add sums
    k = np.arange(n)
    if kind == "hann":
        return 0.5 - 0.5 * np.cos(2 * np.pi * k / n)
    if kind == "hamming":
        return 0.54 - 0.46 * np.cos(2 * np.pi * k / n)
    if kind in ("rect", "rectangular", "boxcar"):
        return np.ones(n)
    raise ValueError(f"unknown window {kind!r}")


def cola_constant(window: np.ndarray, hop: int) -> float | None:
    """Overlap-add sum of ``window`` at ``hop`` if it is constant, else None."""
    n = window.size
    if hop <= 0 or hop > n:
        return None
    total = np.zeros(hop)
    for start in range(0, n, hop):
        seg = window[start:start + hop]
        total[:seg.size] += seg
    if np.ptp(total) > 1e-10 * max(1.0, abs(total.mean())):
        return None
    return float(total.mean())


def num_frames(length: int, hop: int) -> int:
    return 1 + math.ceil(length / hop)


def stft(w: Waveform, n_fft: int = N_FFT, hop: int = HOP, window: str = WINDOW) -> Spectrogram:
    """Centered STFT with reflect padding of n_fft/2 on both ends.

    The tail is zero-padded so ``1 + ceil(len/hop)`` frames cover every input
    sample; ``istft`` uses the stored length to trim.
    """
    if hop > n_fft:
        raise ValueError("hop must not exceed n_fft")
    win = window_array(window, n_fft)
    if cola_constant(win, hop) is None:
        raise ValueError(f"{window} window is not constant-overlap-add at hop {hop}")
    x = w.samples
    if x.size < n_fft:
        raise ValueError(f"signal of {x.size} samples is shorter than one frame ({n_fft})")
    half = n_fft // 2
    padded = np.pad(x, (half, half), mode="reflect")
    n = num_frames(x.size, hop)
    need = (n - 1) * hop + n_fft
    padded = np.pad(padded, (0, need - padded.size))
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[::hop][:n]
    coeffs = np.fft.rfft(frames * win, n=n_fft, axis=1)
    return Spectrogram(coeffs, n_fft, hop, window, x.size, w.sample_rate)


def istft(s: Spectrogram) -> Waveform:
    """Overlap-add inverse of :func:`stft`, normalized by the summed analysis window."""
    win = window_array(s.window, s.n_fft)
    if cola_constant(win, s.hop) is None:
        raise ValueError(f"{s.window} window is not constant-overlap-add at hop {s.hop}")
    frames = np.fft.irfft(s.coeffs, n=s.n_fft, axis=1)
    n = frames.shape[0]
    total = (n - 1) * s.hop + s.n_fft
    out = np.zeros(total)
    wsum = np.zeros(total)
    for t in range(n):
        out[t * s.hop:t * s.hop + s.n_fft] += frames[t]
        wsum[t * s.hop:t * s.hop + s.n_fft] += win
    half = s.n_fft // 2
    out = out[half:half + s.length]
    wsum = wsum[half:half + s.length]
    out = np.divide(out, wsum, out=np.zeros_like(out), where=wsum > 1e-10)
    return Waveform(out, s.sample_rate)


def apply_mask(noisy: Spectrogram, mask: np.ndarray, floor: float = MASK_FLOOR) -> Spectrogram:
    """Scale the noisy magnitude by max(mask, floor); the noisy phase is kept."""
    mask = np.asarray(mask)
    if mask.shape != noisy.shape:
        raise ValueError(f"mask shape {mask.shape} does not match spectrogram {noisy.shape}")
    return Spectrogram(np.maximum(mask, floor) * noisy.coeffs, noisy.n_fft, noisy.hop,
                       noisy.window, noisy.length, noisy.sample_rate)


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Polyphase windowed-sinc (Kaiser) resampling to ``target_rate``."""
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError("target rate must be positive")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    g = math.gcd(target_rate, w.sample_rate)
    up, down = target_rate // g, w.sample_rate // g
    rate = max(up, down)
    taps = firwin(RESAMPLE_TAPS_PER_PHASE * rate + 1, 1.0 / rate, window=("kaiser", KAISER_BETA))
    y = resample_poly(w.samples, up, down, window=taps)
    n_out = int(round(len(w) * target_rate / w.sample_rate))
    if y.size >= n_out:
        y = y[:n_out]
    else:
        y = np.pad(y, (0, n_out - y.size))
    return Waveform(y, target_rate)


@dataclass
class NormStats:
    """Per-frequency mean/std of log1p magnitude."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, magnitudes) -> "NormStats":
        """Statistics over all frames of the given (T, F) magnitudes (training split only).

        Streams: chunk moments are merged pairwise, so any iterable works.
        """
        n, mean, m2 = 0, None, None
        for m in magnitudes:
            f = np.log1p(np.asarray(m, dtype=np.float64))
            k = f.shape[0]
            if k == 0:
                continue
            cm = f.mean(axis=0)
            c2 = ((f - cm) ** 2).sum(axis=0)
            if mean is None:
                n, mean, m2 = k, cm, c2
                continue
            delta = cm - mean
            tot = n + k
            mean = mean + delta * (k / tot)
            m2 = m2 + c2 + delta ** 2 * (n * k / tot)
            n = tot
        if mean is None:
            raise ValueError("no frames to fit normalization statistics")
        std = np.sqrt(m2 / n)
        zero = std == 0
        if zero.any():
            log.warning("zero std in %d frequency bins; substituting 1.0", int(zero.sum()))
            std = np.where(zero, 1.0, std)
        return cls(mean, std)


def normalize_spectrogram(magnitude: np.ndarray, stats: NormStats) -> np.ndarray:
    std = np.where(stats.std == 0, 1.0, stats.std)
    return (np.log1p(magnitude) - stats.mean) / std


def denormalize_spectrogram(features: np.ndarray, stats: NormStats) -> np.ndarray:
    std = np.where(stats.std == 0, 1.0, stats.std)
    return np.expm1(features * std + stats.mean)


class WavError(ValueError):
    pass


def read_wav(path) -> Waveform:
    """Mono 16-bit PCM WAV -> Waveform with samples in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            comp = fh.getcomptype()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise WavError(f"{path}: unsupported WAV ({exc})") from None
    except EOFError:
        raise WavError(f"{path}: truncated WAV") from None
    if comp != "NONE":
        raise WavError(f"{path}: not PCM ({comp})")
    if channels != 1:
        raise WavError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise WavError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(data, rate)


def write_wav(path, w: Waveform) -> Path:
    path = Path(path)
    q = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(q.tobytes())
    return path
