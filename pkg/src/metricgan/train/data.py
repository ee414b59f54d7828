"""In-memory training corpus: waveforms plus the spectral views the networks consume."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..corpus import Manifest, ManifestRow
from ..signal import (HOP, MASK_FLOOR, N_FFT, WINDOW, NormStats, Spectrogram, Waveform, apply_mask,
                      istft, normalize_spectrogram, stft)


@dataclass
class Utterance:
    uid: str
    snr_db: float
    clean: Waveform
    noisy: Waveform
    noisy_spec: Spectrogram = field(repr=False)
    noisy_mag: np.ndarray = field(repr=False)
    clean_mag: np.ndarray = field(repr=False)
    features: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_waves(cls, uid: str, clean: Waveform, noisy: Waveform, snr_db: float = float("nan"),
                   n_fft: int = N_FFT, hop: int = HOP, window: str = WINDOW) -> "Utterance":
        if len(clean) != len(noisy) or clean.sample_rate != noisy.sample_rate:
            raise ValueError(f"{uid}: clean and noisy waveforms differ in length or rate")
        spec = stft(noisy, n_fft, hop, window)
        return cls(uid, float(snr_db), clean, noisy, spec, spec.magnitude, stft(clean, n_fft, hop, window).magnitude)

    @property
    def n_frames(self) -> int:
        return self.noisy_mag.shape[0]

    def resynthesize(self, mask: np.ndarray, floor: float = MASK_FLOOR) -> Waveform:
        return istft(apply_mask(self.noisy_spec, mask, floor))


@dataclass
class DSP:
    n_fft: int = N_FFT
    hop: int = HOP
    window: str = WINDOW

    @property
    def n_freq(self) -> int:
        return self.n_fft // 2 + 1


class ManifestUtterances(Sequence):
    """Manifest rows rendered into utterances on access.

    Mixing plus one STFT costs a few milliseconds, far below a training
    step, so large training splits never have to sit in memory.
    """

    def __init__(self, manifest: Manifest, rows: Sequence[ManifestRow], dsp: DSP | None = None,
                 stats: NormStats | None = None):
        self.manifest = manifest
        self.rows = list(rows)
        self.dsp = dsp or DSP()
        self.stats = stats

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        row = self.rows[i]
        m = self.manifest.render(row)
        u = Utterance.from_waves(row.utterance_id, m.clean, m.noisy, row.snr_db,
                                 self.dsp.n_fft, self.dsp.hop, self.dsp.window)
        if self.stats is not None:
            u.features = normalize_spectrogram(u.noisy_mag, self.stats)
        return u


@dataclass
class TrainingCorpus:
    train: Sequence[Utterance]
    validation: list[Utterance]
    stats: NormStats

    @classmethod
    def from_utterances(cls, train: Sequence[Utterance], validation: Sequence[Utterance],
                        stats: NormStats | None = None) -> "TrainingCorpus":
        if not train:
            raise ValueError("training split is empty")
        stats = stats or NormStats.fit(u.noisy_mag for u in train)
        for u in [*train, *validation]:
            u.features = normalize_spectrogram(u.noisy_mag, stats)
        return cls(list(train), list(validation), stats)

    @classmethod
    def from_manifest(cls, manifest: Manifest, train_limit: int | None = None,
                      validation_limit: int | None = None, dsp: DSP | None = None,
                      stats: NormStats | None = None) -> "TrainingCorpus":
        """Training rows stay lazy; validation rows are rendered once and kept."""
        rows = manifest.split("train")
        train = ManifestUtterances(manifest, rows[:train_limit] if train_limit else rows, dsp)
        if not len(train):
            raise ValueError("training split is empty")
        stats = stats or NormStats.fit(u.noisy_mag for u in train)
        train.stats = stats
        vrows = manifest.split("validation")
        validation = ManifestUtterances(manifest, vrows[:validation_limit] if validation_limit else vrows, dsp, stats)
        return cls(train, list(validation), stats)


def batches(utts: Sequence[Utterance], batch_size: int, rng: np.random.Generator | None = None
            ) -> Iterable[list[Utterance]]:
    order = np.arange(len(utts))
    if rng is not None:
        order = rng.permutation(len(utts))
    for start in range(0, len(order), batch_size):
        yield [utts[i] for i in order[start:start + batch_size]]


def same_length_groups(utts: Sequence[Utterance]) -> list[list[int]]:
    """Indices grouped by frame count so each group stacks into one array."""
    groups: dict[int, list[int]] = {}
    for i, u in enumerate(utts):
        groups.setdefault(u.n_frames, []).append(i)
    return list(groups.values())
