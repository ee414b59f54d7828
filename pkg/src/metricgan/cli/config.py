"""Run configuration: INI sections with typed defaults, strict keys, canonical echo."""
from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass
from pathlib import Path

from ..corpus import NOISE_FAMILIES, MixRecipe, SynthClean, SynthNoise
from ..neural import DiscriminatorConfig, GeneratorConfig
from ..train import TrainPlan
from ..train.data import DSP


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


def _names(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "paths": {
        "manifest": (str, ""),
        "clean_dir": (str, ""),
        "noise_dir": (str, ""),
        "synth_fallback": (_bool, True),
    },
    "corpus": {
        "seed": (int, 0),
        "clean_counts": (_ints, (200, 30, 30)),
        "noise_counts": (_ints, (10, 5, 4)),
        "duration_s": (float, 1.0),
        "sample_rate": (int, 16000),
        "clean_seed": (int, 1000),
        "noise_seed": (int, 2000),
        "noise_families": (_names, NOISE_FAMILIES),
        "noise_duration_s": (float, 3.0),
        "train_snrs": (_floats, (-8.0, -4.0, 0.0, 4.0, 8.0)),
        "validation_snrs": (_floats, (-10.0, -5.0, 0.0, 5.0, 10.0)),
        "test_snrs": (_floats, (-12.0, -6.0, 0.0, 6.0, 12.0)),
        "train_policy": (str, "cross"),
        "validation_policy": (str, "per_snr"),
        "test_policy": (str, "cross"),
        "write_wavs": (_bool, True),
    },
    "dsp": {
        "n_fft": (int, 512),
        "hop": (int, 256),
        "window": (str, "hann"),
        "mask_floor": (float, 0.05),
    },
    "generator": {
        "context": (int, 3),
        "hidden": (_ints, (256, 256)),
        "slope": (float, 0.2),
    },
    "discriminator": {
        "channels": (_ints, (8, 16)),
        "kernels": (_ints, (5, 7)),
        "dense": (_ints, (8,)),
        "slope": (float, 0.2),
        "spectral_norm": (_bool, True),
        "compression": (str, "log1p"),
        "gain_match": (_bool, False),
    },
    "train": {
        "loss_family": (str, "metricgan"),
        "metrics": (_names, ("stoi",)),
        "targets": (_floats, (1.0,)),
        "eval_metrics": (_names, ("stoi", "quality")),
        "lam": (float, 0.01),
        "mu": (float, 0.0),
        "d_steps": (int, 1),
        "epochs": (int, 10),
        "batch_size": (int, 8),
        "seed": (int, 0),
        "lr_g": (float, 2e-4),
        "lr_d": (float, 2e-4),
        "eval_every": (int, 0),
        "max_iterations": (int, 0),
        "train_limit": (int, 0),
        "validation_limit": (int, 0),
    },
    "assign": {
        "scores": (_floats, (0.3, 0.6, 1.0)),
        "mu": (float, 1.0),
        "tolerance": (float, 0.05),
    },
    "multimetric": {
        "tolerance": (float, 0.1),
    },
    "evaluate": {
        "split": (str, "test"),
    },
}


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]]

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None, strict=True)
        cp.optionxform = str
        try:
            cp.read_string(text, source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None
        cfg = cls.defaults()
        for section in cp.sections():
            if section not in SCHEMA:
                raise ConfigError(f"{source}: unknown section [{section}]")
            for key, raw in cp.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
                conv = SCHEMA[section][key][0]
                try:
                    cfg.values[section][key] = conv(raw.strip())
                except ValueError as exc:
                    raise ConfigError(f"{source}: [{section}] {key} = {raw!r}: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls.defaults()
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.parse(text, str(path))

    def override(self, section: str, key: str, value) -> "RunConfig":
        values = {s: dict(kv) for s, kv in self.values.items()}
        values[section][key] = value
        out = RunConfig(values)
        out.validate()
        return out

    def validate(self) -> None:
        """Build every derived object once so bad values fail before any work starts."""
        try:
            self.recipe()
            self.synth_clean()
            self.synth_noise()
            self.generator_config()
            self.discriminator_config()
            self.plan()
            dsp = self.dsp()
            if dsp.hop > dsp.n_fft or dsp.hop < 1:
                raise ValueError("hop must be in [1, n_fft]")
            if not 0.0 <= self["dsp"]["mask_floor"] < 1.0:
                raise ValueError("mask_floor must be in [0, 1)")
            if len(self["corpus"]["clean_counts"]) != 3 or len(self["corpus"]["noise_counts"]) != 3:
                raise ValueError("clean_counts and noise_counts take three values (train, validation, test)")
            for s in self["assign"]["scores"]:
                if not 0.0 <= s <= 1.0:
                    raise ValueError(f"assigned score {s} outside [0, 1]")
            if self["evaluate"]["split"] not in ("train", "validation", "test"):
                raise ValueError("evaluate split must be train, validation or test")
            if self["train"]["seed"] < 0 or self["corpus"]["seed"] < 0:
                raise ValueError("seeds must be non-negative")
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    # ---- derived objects

    def recipe(self) -> MixRecipe:
        c = self["corpus"]
        return MixRecipe(c["train_snrs"], c["validation_snrs"], c["test_snrs"], c["train_policy"],
                         c["validation_policy"], c["test_policy"], c["seed"])

    def synth_clean(self) -> SynthClean:
        c = self["corpus"]
        return SynthClean(tuple(c["clean_counts"]), c["duration_s"], c["sample_rate"], c["clean_seed"])

    def synth_noise(self) -> SynthNoise:
        c = self["corpus"]
        unknown = set(c["noise_families"]) - set(NOISE_FAMILIES)
        if unknown:
            raise ValueError(f"unknown noise families {sorted(unknown)}")
        return SynthNoise(tuple(c["noise_families"]), c["noise_seed"], c["noise_duration_s"])

    def dsp(self) -> DSP:
        d = self["dsp"]
        return DSP(d["n_fft"], d["hop"], d["window"])

    def generator_config(self) -> GeneratorConfig:
        g = self["generator"]
        return GeneratorConfig(n_freq=self.dsp().n_freq, context=g["context"], hidden=g["hidden"], slope=g["slope"])

    def discriminator_config(self) -> DiscriminatorConfig:
        d = self["discriminator"]
        return DiscriminatorConfig(d["channels"], d["kernels"], d["dense"], d["slope"], d["spectral_norm"],
                                   d["compression"], d["gain_match"])

    def plan(self, **changes) -> TrainPlan:
        t = dict(self["train"])
        t.pop("train_limit")
        t.pop("validation_limit")
        t["mask_floor"] = self["dsp"]["mask_floor"]
        t.update(changes)
        return TrainPlan(**t)

    # ---- echo

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for section, keys in SCHEMA.items():
            cp[section] = {k: _fmt(self.values[section][k]) for k in keys}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()
