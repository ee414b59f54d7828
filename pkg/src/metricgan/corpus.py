"""Synthetic speech/noise sources, SNR-controlled mixing, split manifests."""
from __future__ import annotations

import csv
import hashlib
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import butter, sosfilt

from .signal import Waveform, read_wav, resample

SPLITS = ("train", "validation", "test")
NOISE_FAMILIES = ("white", "pink", "babble", "hum", "impulsive", "bandlimited")
CROSSFADE_S = 0.010
CLEAN_RMS = 0.1
NOISE_SECONDS = 3.0


class CorpusError(ValueError):
    pass


# ---------------------------------------------------------------- synthesis

def _ramp_envelope(n: int, ramp: int) -> np.ndarray:
    env = np.ones(n)
    ramp = min(ramp, n // 2)
    if ramp > 0:
        r = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = r
        env[n - ramp:] = r[::-1]
    return env


def _voiced(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    f0_start = rng.uniform(80, 300)
    f0_end = f0_start * rng.uniform(0.8, 1.2)
    f0 = np.linspace(f0_start, f0_end, n)
    phase = 2 * np.pi * np.cumsum(f0) / sr
    formants = [(rng.uniform(300, 900), rng.uniform(80, 200)),
                (rng.uniform(900, 2500), rng.uniform(120, 300))]
    out = np.zeros(n)
    for k in range(1, int(rng.integers(3, 9)) + 1):
        fk = k * 0.5 * (f0_start + f0_end)
        if fk >= 0.45 * sr:
            break
        gain = 1.0 / k + sum(np.exp(-0.5 * ((fk - fc) / bw) ** 2) for fc, bw in formants)
        out += gain * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    # aspiration noise above the harmonic stack keeps the upper bands populated
    lo = rng.uniform(1200, 2000)
    sos = butter(2, [lo, min(4800.0, 0.45 * sr)], btype="bandpass", fs=sr, output="sos")
    breath = sosfilt(sos, rng.standard_normal(n))
    breath *= rng.uniform(0.15, 0.3) * np.sqrt(np.mean(out ** 2) / (np.mean(breath ** 2) + 1e-20))
    return out + breath


def _unvoiced(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    lo = rng.uniform(1000, 3000)
    hi = min(lo * rng.uniform(1.5, 2.5), 0.45 * sr)
    sos = butter(4, [lo, hi], btype="bandpass", fs=sr, output="sos")
    return sosfilt(sos, rng.standard_normal(n)) * 3.0


def synth_clean(seed: int, duration_s: float = 1.0, sample_rate: int = 16000) -> Waveform:
    """Speech-like test signal: voiced harmonic stacks, unvoiced noise bursts, 10-20% silence.

    Deterministic in ``seed``; RMS normalized to 0.1.
    """
    if duration_s < 0.5:
        raise CorpusError("synthetic utterances must be at least 0.5 s")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    silence = int(round(rng.uniform(0.10, 0.20) * n))
    speech_len = n - silence
    segments = []
    filled = 0
    while filled < speech_len:
        length = int(rng.uniform(0.060, 0.200) * sample_rate)
        length = min(length, speech_len - filled)
        voiced = rng.random() < 0.7
        seg = _voiced(rng, length, sample_rate) if voiced else _unvoiced(rng, length, sample_rate)
        seg = seg * _ramp_envelope(length, int(0.008 * sample_rate)) * rng.uniform(0.4, 1.0)
        segments.append(seg)
        filled += length
    gaps = rng.dirichlet(np.ones(len(segments) + 1)) * silence
    gaps = np.floor(gaps).astype(int)
    gaps[-1] += silence - gaps.sum()
    out = np.zeros(n)
    pos = gaps[0]
    for seg, gap in zip(segments, gaps[1:]):
        out[pos:pos + seg.size] = seg
        pos += seg.size + gap
    out *= CLEAN_RMS / np.sqrt(np.mean(out ** 2))
    return Waveform(out, sample_rate)


def _colored(rng: np.random.Generator, n: int, exponent: float) -> np.ndarray:
    # power spectral density ~ 1/f^exponent
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    spec *= f ** (-exponent / 2.0)
    spec[0] = 0.0
    return np.fft.irfft(spec, n=n)


# one parameter set per split variant (train, validation, test), so split
# noise sources never coincide even within a family
_VARIANTS = {
    "white": (0.0, 0.3, -0.3),
    "pink": (1.0, 1.3, 0.8),
    "babble": (6, 4, 9),
    "hum": (50.0, 60.0, 55.0),
    "impulsive": (5.0, 3.0, 8.0),
    "bandlimited": ((300.0, 3000.0), (500.0, 4000.0), (200.0, 2500.0)),
}


def synth_noise(family: str, variant: int = 0, seed: int = 0, duration_s: float = NOISE_SECONDS,
                sample_rate: int = 16000) -> Waveform:
    if family not in _VARIANTS:
        raise CorpusError(f"unknown noise family {family!r}")
    if not 0 <= variant < 3:
        raise CorpusError("noise variant must be 0, 1 or 2")
    param = _VARIANTS[family][variant]
    rng = np.random.default_rng([seed, NOISE_FAMILIES.index(family), variant])
    n = int(round(duration_s * sample_rate))
    sr = sample_rate
    if family in ("white", "pink"):
        x = _colored(rng, n, param)
    elif family == "babble":
        x = np.zeros(n)
        for talker in range(param):
            parts, have = [], 0
            while have < n:
                part = synth_clean(int(rng.integers(2**31)), 1.0, sr).samples
                parts.append(part)
                have += part.size
            x += np.roll(np.concatenate(parts)[:n], int(rng.integers(n)))
    elif family == "hum":
        t = np.arange(n) / sr
        x = sum(np.sin(2 * np.pi * k * param * t + rng.uniform(0, 2 * np.pi)) / k
                for k in range(1, 11) if k * param < 0.45 * sr)
        x = x * (1 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t)) + 0.05 * rng.standard_normal(n)
    elif family == "impulsive":
        x = 0.01 * rng.standard_normal(n)
        count = max(1, rng.poisson(param * duration_s))
        for start in rng.integers(0, n, size=count):
            length = int(rng.uniform(0.005, 0.020) * sr)
            burst = rng.standard_normal(length) * np.exp(-np.arange(length) / (0.3 * length))
            end = min(n, start + length)
            x[start:end] += burst[:end - start]
    else:
        lo, hi = param
        hi = min(hi, 0.45 * sr)
        sos = butter(6, [lo, hi], btype="bandpass", fs=sr, output="sos")
        x = sosfilt(sos, rng.standard_normal(n))
    x = np.asarray(x, dtype=np.float64)
    x *= CLEAN_RMS / np.sqrt(np.mean(x ** 2))
    return Waveform(x, sr)


# ------------------------------------------------------------------ mixing

@dataclass(frozen=True)
class Mix:
    noisy: Waveform
    clean: Waveform
    alpha: float
    clip_scale: float
    offset: int

    @property
    def clipped(self) -> bool:
        return self.clip_scale != 1.0


def fit_noise(noise: np.ndarray, n: int, rng: np.random.Generator | None, sample_rate: int) -> tuple[np.ndarray, int]:
    """Random crop when the noise is longer than ``n``, crossfaded loop when shorter."""
    if noise.size >= n:
        offset = int(rng.integers(0, noise.size - n + 1)) if rng is not None else 0
        return noise[offset:offset + n], offset
    fade = min(int(CROSSFADE_S * sample_rate), noise.size // 2)
    out = noise.copy()
    ramp = np.linspace(0.0, 1.0, fade) if fade else np.zeros(0)
    while out.size < n:
        if fade:
            joined = out[-fade:] * (1 - ramp) + noise[:fade] * ramp
            out = np.concatenate([out[:-fade], joined, noise[fade:]])
        else:
            out = np.concatenate([out, noise])
    return out[:n], 0


def mix(clean: Waveform, noise: Waveform, snr_db: float, rng: np.random.Generator | None = None) -> Mix:
    if clean.sample_rate != noise.sample_rate:
        raise CorpusError("clean and noise sample rates differ")
    if not np.isfinite(snr_db):
        raise CorpusError("SNR must be finite")
    noise_fit, offset = fit_noise(noise.samples, len(clean), rng, clean.sample_rate)
    p_clean = np.sqrt(np.mean(clean.samples ** 2))
    p_noise = np.sqrt(np.mean(noise_fit ** 2))
    if p_clean == 0:
        raise CorpusError("clean signal is silent")
    if p_noise == 0:
        raise CorpusError("noise signal is silent")
    alpha = p_clean / (p_noise * 10 ** (snr_db / 20))
    noisy = clean.samples + alpha * noise_fit
    peak = np.max(np.abs(noisy))
    scale = 1.0
    if peak > 1.0:
        scale = 0.99 / peak
    return Mix(Waveform(noisy * scale, clean.sample_rate), Waveform(clean.samples * scale, clean.sample_rate),
               float(alpha), float(scale), offset)


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float, rng: np.random.Generator | None = None) -> Waveform:
    """clean + alpha*noise with alpha set so the clean-to-noise power ratio is ``snr_db``."""
    return mix(clean, noise, snr_db, rng).noisy


def measured_snr(clean: Waveform, noisy: Waveform) -> float:
    resid = noisy.samples - clean.samples
    return float(10 * np.log10(np.sum(clean.samples ** 2) / np.sum(resid ** 2)))


# --------------------------------------------------------------- manifests

@dataclass(frozen=True)
class ManifestRow:
    utterance_id: str
    split: str
    clean: str
    noise: str
    snr_db: float


MANIFEST_FIELDS = ("utterance_id", "split", "clean", "noise", "snr_db")


@dataclass
class MixRecipe:
    train_snrs: tuple[float, ...] = (-8.0, -4.0, 0.0, 4.0, 8.0)
    validation_snrs: tuple[float, ...] = (-10.0, -5.0, 0.0, 5.0, 10.0)
    test_snrs: tuple[float, ...] = (-12.0, -6.0, 0.0, 6.0, 12.0)
    # "cross": every clean x noise x SNR; "per_snr": one seeded noise per clean, every SNR;
    # "random": one seeded (noise, SNR) per clean
    train_policy: str = "cross"
    validation_policy: str = "per_snr"
    test_policy: str = "cross"
    seed: int = 0

    def __post_init__(self):
        for split in SPLITS:
            if getattr(self, f"{split}_policy") not in ("cross", "per_snr", "random"):
                raise CorpusError(f"unknown {split} policy {getattr(self, f'{split}_policy')!r}")
            snrs = tuple(float(s) for s in getattr(self, f"{split}_snrs"))
            if not snrs or not all(np.isfinite(snrs)):
                raise CorpusError(f"{split} SNR grid must be non-empty and finite")
            setattr(self, f"{split}_snrs", snrs)

    def snrs(self, split: str) -> tuple[float, ...]:
        return getattr(self, f"{split}_snrs")

    def policy(self, split: str) -> str:
        return getattr(self, f"{split}_policy")


@dataclass
class SynthClean:
    counts: tuple[int, int, int] = (200, 30, 30)
    duration_s: float = 1.0
    sample_rate: int = 16000
    seed: int = 1000


@dataclass
class SynthNoise:
    families: tuple[str, ...] = NOISE_FAMILIES
    seed: int = 2000
    duration_s: float = NOISE_SECONDS


def row_rng(seed: int, utterance_id: str) -> np.random.Generator:
    digest = hashlib.sha256(utterance_id.encode("utf-8")).digest()
    return np.random.default_rng([int(seed), int.from_bytes(digest[:8], "little")])


def _clean_sources(source, root: Path | None) -> dict[str, list[str]]:
    if isinstance(source, SynthClean):
        out, k = {}, 0
        for split, count in zip(SPLITS, source.counts):
            out[split] = [f"synth:clean:{source.seed + k + i}:{source.duration_s:g}:{source.sample_rate}"
                          for i in range(count)]
            k += count
        return out
    source, counts = source
    files = sorted(Path(source).glob("*.wav"))
    if sum(counts) > len(files):
        raise CorpusError(f"need {sum(counts)} clean files in {source}, found {len(files)}")
    return _partition([_relpath(f, root) for f in files], counts)


def _noise_sources(source, root: Path | None) -> dict[str, list[str]]:
    if isinstance(source, SynthNoise):
        if not source.families:
            raise CorpusError("no noise families given")
        return {split: [f"synth:noise:{fam}:{v}:{source.seed}:{source.duration_s:g}" for fam in source.families]
                for v, split in enumerate(SPLITS)}
    source, counts = source
    files = sorted(Path(source).glob("*.wav"))
    if any(c < 1 for c in counts) or sum(counts) > len(files):
        raise CorpusError(
            f"insufficient noise diversity for disjoint splits: need {list(counts)} "
            f"(train/validation/test) files in {source}, found {len(files)}")
    return _partition([_relpath(f, root) for f in files], counts)


def _partition(items: list[str], counts: Sequence[int]) -> dict[str, list[str]]:
    out, k = {}, 0
    for split, c in zip(SPLITS, counts):
        out[split] = items[k:k + c]
        k += c
    return out


def _relpath(path: Path, root: Path | None) -> str:
    return os.path.relpath(path, root).replace(os.sep, "/") if root is not None else str(path)


def build_manifest(clean_source, noise_source, recipe: MixRecipe, root=None) -> "Manifest":
    """Deterministic split manifest.

    ``clean_source``: :class:`SynthClean` or ``(directory, (n_train, n_val, n_test))``.
    ``noise_source``: :class:`SynthNoise` or ``(directory, (n_train, n_val, n_test))``.
    File paths are stored relative to ``root`` (the manifest's directory).
    """
    root = Path(root) if root is not None else None
    cleans = _clean_sources(clean_source, root)
    noises = _noise_sources(noise_source, root)
    rows = []
    for split in SPLITS:
        snrs = recipe.snrs(split)
        policy = recipe.policy(split)
        split_noises = noises[split]
        if cleans[split] and not split_noises:
            raise CorpusError(f"no noise sources for split {split}")
        for ci, clean in enumerate(cleans[split]):
            base = f"{split[:2]}{ci:05d}"
            pick = row_rng(recipe.seed, base)
            if policy == "cross":
                combos = [(ni, s) for ni in range(len(split_noises)) for s in snrs]
            elif policy == "per_snr":
                ni = int(pick.integers(len(split_noises)))
                combos = [(ni, s) for s in snrs]
            else:
                combos = [(int(pick.integers(len(split_noises))), snrs[int(pick.integers(len(snrs)))])]
            for ni, snr in combos:
                uid = f"{base}_n{ni:02d}_{snr:+g}dB"
                rows.append(ManifestRow(uid, split, clean, split_noises[ni], float(snr)))
    return Manifest(rows, recipe.seed, root)


@dataclass
class Manifest:
    rows: list[ManifestRow]
    seed: int = 0
    root: Path | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        ids = [r.utterance_id for r in self.rows]
        if len(set(ids)) != len(ids):
            raise CorpusError("duplicate utterance ids in manifest")
        for src in ("clean", "noise"):
            owner: dict[str, str] = {}
            for r in self.rows:
                key = getattr(r, src)
                if owner.setdefault(key, r.split) != r.split:
                    raise CorpusError(f"{src} source {key} appears in both {owner[key]} and {r.split}")

    def __len__(self):
        return len(self.rows)

    def split(self, name: str) -> list[ManifestRow]:
        return [r for r in self.rows if r.split == name]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["#seed", self.seed])
        w.writerow(MANIFEST_FIELDS)
        for r in self.rows:
            w.writerow([r.utterance_id, r.split, r.clean, r.noise, repr(r.snr_db)])
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_csv().encode("utf-8"))
        return path

    @classmethod
    def read(cls, path) -> "Manifest":
        path = Path(path)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            first = next(reader)
            if not first or first[0] != "#seed":
                raise CorpusError(f"{path}: missing seed header")
            header = next(reader)
            if tuple(header) != MANIFEST_FIELDS:
                raise CorpusError(f"{path}: unexpected columns {header}")
            rows = [ManifestRow(u, s, c, n, float(snr)) for u, s, c, n, snr in reader]
        return cls(rows, int(first[1]), path.parent)

    def check_files(self) -> None:
        for r in self.rows:
            for ref in (r.clean, r.noise):
                if not ref.startswith("synth:") and not self._resolve(ref).exists():
                    raise CorpusError(f"missing source file {ref}")

    def _resolve(self, ref: str) -> Path:
        p = Path(ref)
        return p if p.is_absolute() or self.root is None else Path(os.path.normpath(self.root / p))

    def load_source(self, ref: str, sample_rate: int | None = None) -> Waveform:
        key = (ref, sample_rate)
        if key in self._cache:
            return self._cache[key]
        parts = ref.split(":")
        if parts[0] == "synth" and parts[1] == "clean":
            w = synth_clean(int(parts[2]), float(parts[3]), int(parts[4]))
        elif parts[0] == "synth" and parts[1] == "noise":
            w = synth_noise(parts[2], int(parts[3]), int(parts[4]), float(parts[5]), sample_rate or 16000)
        else:
            w = read_wav(self._resolve(ref))
        if sample_rate is not None and w.sample_rate != sample_rate:
            w = resample(w, sample_rate)
        self._cache[key] = w
        return w

    def render(self, row: ManifestRow) -> Mix:
        clean = self.load_source(row.clean)
        noise = self.load_source(row.noise, clean.sample_rate)
        return mix(clean, noise, row.snr_db, row_rng(self.seed, row.utterance_id))

    def render_all(self, rows: Iterable[ManifestRow] | None = None) -> Iterable[tuple[ManifestRow, Mix]]:
        for row in (self.rows if rows is None else rows):
            yield row, self.render(row)
