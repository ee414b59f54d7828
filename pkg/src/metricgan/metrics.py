"""Black-box evaluation metrics and their [0, 1] normalizations.

``stoi`` is the short-time objective intelligibility measure (Taal et al.,
2011). ``seg_snr_quality`` is a segmental-SNR quality score used in place of
PESQ; its [0, 1] mapping is our own choice, not a PESQ calibration.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .signal import Waveform, resample

# STOI constants
STOI_RATE = 10000
STOI_FRAME = 256
STOI_HOP = 128
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA = -15.0
DYN_RANGE_DB = 40.0
EPS = np.finfo(np.float64).eps

# segmental SNR constants
SEG_FRAME = 256
SEG_HOP = 128
SEG_MIN_DB = -10.0
SEG_MAX_DB = 35.0


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricSpec:
    name: str
    raw_range: tuple[float, float]
    fn: Callable[[Waveform, Waveform], float]

    def normalize(self, raw: float) -> float:
        lo, hi = self.raw_range
        return float(min(1.0, max(0.0, (raw - lo) / (hi - lo))))


@dataclass(frozen=True)
class MetricScore:
    metric: str
    raw: float
    normalized: float


def normalize_score(spec: MetricSpec, raw: float) -> float:
    return spec.normalize(raw)


def _check_pair(degraded: Waveform, clean: Waveform):
    if len(degraded) != len(clean):
        raise MetricError(f"length mismatch: degraded {len(degraded)} vs clean {len(clean)}")
    if degraded.sample_rate != clean.sample_rate:
        raise MetricError("sample rate mismatch")


def stoi_window() -> np.ndarray:
    # symmetric Hann of length N+2 with the zero end points dropped
    return np.hanning(STOI_FRAME + 2)[1:-1]


def _frame_starts(n: int) -> range:
    return range(0, n - STOI_FRAME, STOI_HOP)


def remove_silent_frames(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop frames where the clean signal ``x`` is more than 40 dB below its loudest frame.

    The surviving windowed frames are overlap-added back into two signals.
    """
    win = stoi_window()
    starts = list(_frame_starts(x.size))
    if not starts:
        raise MetricError("signal shorter than one STOI frame")
    xf = np.array([win * x[s:s + STOI_FRAME] for s in starts])
    yf = np.array([win * y[s:s + STOI_FRAME] for s in starts])
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + EPS)
    keep = (energy.max() - DYN_RANGE_DB - energy) < 0
    if not np.any(keep) or np.linalg.norm(xf) == 0:
        raise MetricError("no active frames")
    xf, yf = xf[keep], yf[keep]
    n = (xf.shape[0] - 1) * STOI_HOP + STOI_FRAME
    xs, ys = np.zeros(n), np.zeros(n)
    for i in range(xf.shape[0]):
        xs[i * STOI_HOP:i * STOI_HOP + STOI_FRAME] += xf[i]
        ys[i * STOI_HOP:i * STOI_HOP + STOI_FRAME] += yf[i]
    return xs, ys


def third_octave_matrix(rate: int = STOI_RATE, n_fft: int = STOI_NFFT, n_bands: int = STOI_BANDS,
                        min_freq: float = STOI_MIN_FREQ) -> tuple[np.ndarray, np.ndarray]:
    """(bands x bins) 0/1 matrix; bin f joins band k when center_k*2^-1/6 <= f < center_k*2^1/6."""
    freqs = np.arange(n_fft // 2 + 1) * rate / n_fft
    centers = min_freq * 2.0 ** (np.arange(n_bands) / 3.0)
    lo, hi = centers * 2 ** (-1 / 6), centers * 2 ** (1 / 6)
    obm = ((freqs[None, :] >= lo[:, None]) & (freqs[None, :] < hi[:, None])).astype(np.float64)
    return obm, centers


def _stoi_spectrum(x: np.ndarray) -> np.ndarray:
    win = stoi_window()
    frames = np.array([win * x[s:s + STOI_FRAME] for s in _frame_starts(x.size)])
    return np.fft.rfft(frames, n=STOI_NFFT, axis=1)  # (frames, bins)


def band_envelopes(degraded: np.ndarray, clean: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-third-octave band magnitudes (bands x frames) of clean and degraded 10 kHz signals."""
    xs, ys = remove_silent_frames(clean, degraded)
    obm, _ = third_octave_matrix()
    x_spec = _stoi_spectrum(xs)
    y_spec = _stoi_spectrum(ys)
    x_tob = np.sqrt(obm @ (np.abs(x_spec) ** 2).T)
    y_tob = np.sqrt(obm @ (np.abs(y_spec) ** 2).T)
    return x_tob, y_tob


def segment_correlations(x_tob: np.ndarray, y_tob: np.ndarray) -> np.ndarray:
    """Correlation for every band and every N-frame segment, shape (segments, bands)."""
    n_frames = x_tob.shape[1]
    if n_frames < STOI_SEGMENT:
        raise MetricError(f"only {n_frames} active frames, need {STOI_SEGMENT}")
    idx = np.arange(STOI_SEGMENT)[None, :] + np.arange(n_frames - STOI_SEGMENT + 1)[:, None]
    x_seg = x_tob[:, idx].transpose(1, 0, 2)  # (segments, bands, N)
    y_seg = y_tob[:, idx].transpose(1, 0, 2)
    clip = 10 ** (-STOI_BETA / 20)
    x_norm = np.linalg.norm(x_seg, axis=2, keepdims=True)
    y_norm = np.linalg.norm(y_seg, axis=2, keepdims=True)
    scale = np.divide(x_norm, y_norm, out=np.zeros_like(x_norm), where=y_norm > 0)
    y_prim = np.minimum(y_seg * scale, x_seg * (1 + clip))
    xc = x_seg - x_seg.mean(axis=2, keepdims=True)
    yc = y_prim - y_prim.mean(axis=2, keepdims=True)
    denom = np.linalg.norm(xc, axis=2) * np.linalg.norm(yc, axis=2)
    dot = np.sum(xc * yc, axis=2)
    # a constant (or silent) segment carries no envelope information: count it as 0
    return np.divide(dot, denom, out=np.zeros_like(dot), where=denom > 0)


def stoi_raw(degraded: Waveform, clean: Waveform) -> float:
    _check_pair(degraded, clean)
    x = resample(clean, STOI_RATE).samples
    y = resample(degraded, STOI_RATE).samples
    if not np.any(x):
        raise MetricError("no active frames")
    x_tob, y_tob = band_envelopes(y, x)
    return float(np.mean(segment_correlations(x_tob, y_tob)))


def seg_snr_raw(degraded: Waveform, clean: Waveform) -> float:
    _check_pair(degraded, clean)
    x, y = clean.samples, degraded.samples
    if x.size < SEG_FRAME:
        raise MetricError(f"signal shorter than one frame ({SEG_FRAME})")
    starts = range(0, x.size - SEG_FRAME + 1, SEG_HOP)
    xf = np.array([x[s:s + SEG_FRAME] for s in starts])
    ef = np.array([y[s:s + SEG_FRAME] - x[s:s + SEG_FRAME] for s in starts])
    sig = np.sum(xf ** 2, axis=1)
    err = np.sum(ef ** 2, axis=1)
    if sig.max() <= 0:
        raise MetricError("no active frames")
    active = sig > sig.max() * 10 ** (-DYN_RANGE_DB / 10)
    with np.errstate(divide="ignore"):
        snr = 10 * np.log10(sig[active]) - 10 * np.log10(err[active])
    snr = np.clip(snr, SEG_MIN_DB, SEG_MAX_DB)
    return float(np.mean(snr))


STOI = MetricSpec("stoi", (0.0, 1.0), stoi_raw)
QUALITY = MetricSpec("quality", (SEG_MIN_DB, SEG_MAX_DB), seg_snr_raw)
REGISTRY: dict[str, MetricSpec] = {STOI.name: STOI, QUALITY.name: QUALITY}


def get_metric(name: str) -> MetricSpec:
    try:
        return REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown metric {name!r}; known: {sorted(REGISTRY)}") from None


def score(spec: MetricSpec, degraded: Waveform, clean: Waveform) -> MetricScore:
    raw = spec.fn(degraded, clean)
    return MetricScore(spec.name, raw, spec.normalize(raw))


def stoi(degraded: Waveform, clean: Waveform) -> MetricScore:
    return score(STOI, degraded, clean)


def seg_snr_quality(degraded: Waveform, clean: Waveform) -> MetricScore:
    return score(QUALITY, degraded, clean)


def write_scores_csv(path, rows) -> None:
    """rows: iterable of (utterance_id, MetricScore)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["utterance_id", "metric", "raw", "normalized"])
        for utt, s in rows:
            w.writerow([utt, s.metric, repr(s.raw), repr(s.normalized)])
