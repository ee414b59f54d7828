from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..metrics import REGISTRY, MetricSpec
from ..neural import DiscriminatorConfig, DiscriminatorNet, GeneratorConfig, GeneratorNet

LOSS_FAMILIES = ("irm_l1", "cgan", "metricgan")


@dataclass
class TrainPlan:
    loss_family: str = "metricgan"
    metrics: tuple[str, ...] = ("stoi",)
    targets: tuple[float, ...] = (1.0,)
    eval_metrics: tuple[str, ...] = ("stoi", "quality")
    lam: float = 0.01
    mu: float = 0.0
    d_steps: int = 1
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    # validation every this many iterations; 0 means once per epoch
    eval_every: int = 0
    # stop after this many generator iterations; 0 means run all epochs
    max_iterations: int = 0
    mask_floor: float = 0.05

    def __post_init__(self):
        self.metrics = tuple(self.metrics)
        self.targets = tuple(float(s) for s in self.targets)
        self.eval_metrics = tuple(self.eval_metrics)
        if self.loss_family not in LOSS_FAMILIES:
            raise ValueError(f"loss_family must be one of {LOSS_FAMILIES}")
        if self.loss_family == "metricgan":
            if not self.metrics:
                raise ValueError("metricgan needs at least one metric")
            if len(self.targets) != len(self.metrics):
                raise ValueError("one assigned score per metric")
        for s in self.targets:
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"assigned score {s} outside [0, 1]")
        if self.lam < 0 or self.mu < 0:
            raise ValueError("lam and mu must be non-negative")
        if self.d_steps < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("d_steps and batch_size must be >= 1, epochs >= 0")
        if self.lr_g < 0 or self.lr_d < 0:
            raise ValueError("learning rates must be non-negative")

    @property
    def uses_discriminator(self) -> bool:
        return self.loss_family != "irm_l1"

    def discriminator_names(self) -> tuple[str, ...]:
        if self.loss_family == "cgan":
            return ("cgan",)
        if self.loss_family == "metricgan":
            return tuple(self.metrics)
        return ()

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class CurvePoint:
    iteration: int
    split: str
    metric: str
    score: float
    loss_g: float = float("nan")
    loss_d: float = float("nan")


@dataclass
class TrainState:
    generator: GeneratorNet
    discriminators: dict[str, DiscriminatorNet]
    rng: np.random.Generator
    iteration: int = 0
    epoch: int = 0
    curves: list[CurvePoint] = field(default_factory=list)

    def curve(self, metric: str, split: str = "validation") -> list[tuple[int, float]]:
        return [(p.iteration, p.score) for p in self.curves if p.metric == metric and p.split == split]

    def latest(self, metric: str, split: str = "validation") -> float:
        pts = self.curve(metric, split)
        if not pts:
            raise KeyError(f"no {split} scores for {metric}")
        return pts[-1][1]


def resolve_metrics(names, custom: dict[str, MetricSpec] | None = None) -> list[MetricSpec]:
    table = {**REGISTRY, **(custom or {})}
    try:
        return [table[n] for n in names]
    except KeyError as exc:
        raise KeyError(f"unknown metric {exc.args[0]!r}; known: {sorted(table)}") from None


def init_state(plan: TrainPlan, gen_config: GeneratorConfig | None = None,
               disc_config: DiscriminatorConfig | None = None, dtype=np.float32) -> TrainState:
    seeds = np.random.SeedSequence(plan.seed).spawn(2 + len(plan.discriminator_names()))
    gen = GeneratorNet(gen_config, seed=int(seeds[0].generate_state(1)[0]), dtype=dtype)
    discs = {name: DiscriminatorNet(disc_config, seed=int(s.generate_state(1)[0]), dtype=dtype)
             for name, s in zip(plan.discriminator_names(), seeds[2:])}
    return TrainState(gen, discs, np.random.default_rng(seeds[1]))
