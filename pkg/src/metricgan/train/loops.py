"""Training loops: IRM-L1, CGAN and MetricGAN (single metric and the greedy multi-metric schedule)."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..metrics import MetricSpec
from ..neural import tensor as T
from ..neural.nets import DiscriminatorNet, GeneratorNet
from ..neural.tensor import NumericalError, Tensor, backward
from . import losses
from .data import TrainingCorpus, Utterance, batches, same_length_groups
from .plan import CurvePoint, TrainPlan, TrainState, resolve_metrics

log = logging.getLogger(__name__)


class DivergenceError(NumericalError):
    pass


def multimetric_schedule(achieved: Sequence[float], targets: Sequence[float]) -> int:
    """Index of the metric farthest from its assigned score (lowest index wins ties)."""
    if len(achieved) == 0:
        raise ValueError("no metrics to schedule")
    if len(achieved) != len(targets):
        raise ValueError("achieved and target lists differ in length")
    gaps = [abs(a - s) for a, s in zip(achieved, targets)]
    best = 0
    for i, g in enumerate(gaps):
        if g > gaps[best]:
            best = i
    return best


@dataclass
class Generated:
    """Generator output for one batch, grouped by utterance length."""

    utts: list[Utterance]
    groups: list[list[int]]
    masks: list[Tensor]
    enhanced: list[Tensor]

    @property
    def order(self) -> list[int]:
        return [i for g in self.groups for i in g]

    def stack(self, attr: str, group: list[int]) -> np.ndarray:
        return np.stack([getattr(self.utts[i], attr) for i in group])

    def flat(self, tensors: list[Tensor]) -> Tensor:
        return T.concat([t.reshape(-1) for t in tensors]) if len(tensors) > 1 else tensors[0].reshape(-1)

    def flat_array(self, attr: str) -> np.ndarray:
        return np.concatenate([self.stack(attr, g).reshape(-1) for g in self.groups])

    def mask_arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray | None] = [None] * len(self.utts)
        for g, m in zip(self.groups, self.masks):
            for k, i in enumerate(g):
                out[i] = m.data[k]
        return out


def generate(gen: GeneratorNet, utts: Sequence[Utterance], floor: float, track: bool = True) -> Generated:
    utts = list(utts)
    groups = same_length_groups(utts)
    masks, enhanced = [], []
    for g in groups:
        feats = np.stack([utts[i].features for i in g])
        if track:
            m = gen(feats)
        else:
            with gen.params.frozen():
                m = gen(feats)
        masks.append(m)
        enhanced.append(T.clip_min(m, floor) * np.stack([utts[i].noisy_mag for i in g]))
    return Generated(utts, groups, masks, enhanced)


def score_masks(utts: Sequence[Utterance], masks: Sequence[np.ndarray], metrics: Sequence[MetricSpec],
                floor: float) -> np.ndarray:
    """Normalized scores Q' of resynthesized enhanced speech, shape (n_metrics, n_utts)."""
    out = np.empty((len(metrics), len(utts)))
    for j, (u, m) in enumerate(zip(utts, masks)):
        wave = u.resynthesize(m, floor)
        for i, spec in enumerate(metrics):
            out[i, j] = spec.normalize(spec.fn(wave, u.clean))
    return out


def _d_eval(disc: DiscriminatorNet, gen_out: Generated, condition: str) -> Tensor:
    """D(G(x), c) for every utterance, in ``gen_out.order``."""
    outs = [disc(enh, gen_out.stack(condition, g)) for g, enh in zip(gen_out.groups, gen_out.enhanced)]
    return T.concat(outs) if len(outs) > 1 else outs[0]


def _d_real_fake(disc: DiscriminatorNet, gen_out: Generated, real: str, condition: str) -> tuple[Tensor, Tensor]:
    """D(real, c) and D(G(x), c) for a discriminator update, one forward per length group."""
    reals, fakes = [], []
    for k, g in enumerate(gen_out.groups):
        cond = gen_out.stack(condition, g)
        n = len(g)
        ev = T.concat([gen_out.stack(real, g), gen_out.enhanced[k].detach()])
        d = disc(ev, np.concatenate([cond, cond]), update_u=(k == 0))
        reals.append(T.rows(d, 0, n))
        fakes.append(T.rows(d, n, 2 * n))
    if len(reals) == 1:
        return reals[0], fakes[0]
    return T.concat(reals), T.concat(fakes)


def _check(value: float, what: str, iteration: int) -> float:
    if not np.isfinite(value):
        raise DivergenceError(f"{what} diverged (non-finite) at iteration {iteration}")
    return value


def _d_update(disc: DiscriminatorNet, loss: Tensor, lr: float, what: str, iteration: int) -> float:
    value = _check(float(loss.data), what, iteration)
    disc.params.adam_step(backward(loss, disc.params), lr)
    return value


def _g_update(gen: GeneratorNet, loss: Tensor, lr: float, iteration: int) -> float:
    value = _check(float(loss.data), "generator loss", iteration)
    if lr > 0:
        gen.params.adam_step(backward(loss, gen.params), lr)
    return value


def _metricgan_d_step(disc: DiscriminatorNet, gen_out: Generated, q: np.ndarray, plan: TrainPlan,
                      iteration: int) -> float:
    d_clean, d_fake = _d_real_fake(disc, gen_out, "clean_mag", "clean_mag")
    loss = losses.loss_d_metricgan(d_clean, d_fake, q[gen_out.order])
    return _d_update(disc, loss, plan.lr_d, "discriminator loss", iteration)


def _metricgan_g_step(gen: GeneratorNet, disc: DiscriminatorNet, gen_out: Generated, target: float,
                      plan: TrainPlan, iteration: int) -> float:
    with disc.params.frozen():
        d_fake = _d_eval(disc, gen_out, "clean_mag")
    mask = gen_out.flat(gen_out.masks) if plan.mu > 0 else None
    loss = losses.loss_g_metricgan(d_fake, target, mask, plan.mu)
    return _g_update(gen, loss, plan.lr_g, iteration)


class Trainer:
    """Owns one run: the plan, its state, the corpus and the metric objects."""

    def __init__(self, plan: TrainPlan, state: TrainState, corpus: TrainingCorpus,
                 custom_metrics: dict[str, MetricSpec] | None = None,
                 on_eval: Callable[["Trainer", dict], None] | None = None):
        self.plan = plan
        self.state = state
        self.corpus = corpus
        self.train_metrics = resolve_metrics(plan.metrics, custom_metrics) if plan.loss_family == "metricgan" else []
        self.eval_metrics = resolve_metrics(
            list(dict.fromkeys([*plan.eval_metrics, *[m.name for m in self.train_metrics]])), custom_metrics)
        self.on_eval = on_eval
        self._losses_g: list[float] = []
        self._losses_d: list[float] = []
        self._train_q: dict[str, list[float]] = {}

    @property
    def done(self) -> bool:
        return bool(self.plan.max_iterations) and self.state.iteration >= self.plan.max_iterations

    # -- evaluation -------------------------------------------------------

    def enhance_masks(self, utts: Sequence[Utterance]) -> list[np.ndarray]:
        masks: list[np.ndarray] = []
        for batch in batches(utts, max(self.plan.batch_size, 16)):
            masks.extend(generate(self.state.generator, batch, self.plan.mask_floor, track=False).mask_arrays())
        return masks

    def validation_scores(self, utts: Sequence[Utterance] | None = None) -> dict[str, np.ndarray]:
        utts = self.corpus.validation if utts is None else utts
        q = score_masks(utts, self.enhance_masks(utts), self.eval_metrics, self.plan.mask_floor)
        return {spec.name: q[i] for i, spec in enumerate(self.eval_metrics)}

    def evaluate(self) -> dict[str, float]:
        st = self.state
        loss_g = float(np.mean(self._losses_g)) if self._losses_g else float("nan")
        loss_d = float(np.mean(self._losses_d)) if self._losses_d else float("nan")
        means = {}
        for name, vals in self._train_q.items():
            st.curves.append(CurvePoint(st.iteration, "train", name, float(np.mean(vals)), loss_g, loss_d))
        if self.corpus.validation:
            for name, vals in self.validation_scores().items():
                means[name] = float(np.mean(vals))
                st.curves.append(CurvePoint(st.iteration, "validation", name, means[name], loss_g, loss_d))
        self._losses_g.clear()
        self._losses_d.clear()
        self._train_q.clear()
        if self.on_eval is not None:
            self.on_eval(self, means)
        return means

    def surrogate_error(self, utts: Sequence[Utterance], metric: str) -> float:
        """Mean |D(G(x), y) - Q'(G(x), y)| over ``utts`` for one metric's discriminator."""
        spec = next(m for m in self.eval_metrics if m.name == metric)
        disc = self.state.discriminators[metric]
        errs = []
        for batch in batches(utts, max(self.plan.batch_size, 16)):
            out = generate(self.state.generator, batch, self.plan.mask_floor, track=False)
            q = score_masks(batch, out.mask_arrays(), [spec], self.plan.mask_floor)[0]
            with disc.params.frozen():
                d = _d_eval(disc, out, "clean_mag").data
            errs.extend(np.abs(d - q[out.order]))
        return float(np.mean(errs))

    # -- one batch per loss family -----------------------------------------

    def _step_irm(self, batch: list[Utterance]):
        out = generate(self.state.generator, batch, self.plan.mask_floor)
        loss = losses.loss_irm_l1(out.flat(out.enhanced), out.flat_array("clean_mag"))
        self._losses_g.append(_g_update(self.state.generator, loss, self.plan.lr_g, self.state.iteration))

    def _step_cgan(self, batch: list[Utterance]):
        plan, st = self.plan, self.state
        disc = st.discriminators["cgan"]
        out = generate(st.generator, batch, plan.mask_floor)
        for _ in range(plan.d_steps):
            d_real, d_fake = _d_real_fake(disc, out, "clean_mag", "noisy_mag")
            self._losses_d.append(_d_update(disc, losses.loss_d_cgan(d_real, d_fake), plan.lr_d,
                                            "discriminator loss", st.iteration))
        with disc.params.frozen():
            d_fake = _d_eval(disc, out, "noisy_mag")
        loss = losses.loss_g_cgan(d_fake, out.flat(out.enhanced), out.flat_array("clean_mag"), plan.lam)
        self._losses_g.append(_g_update(st.generator, loss, plan.lr_g, st.iteration))

    def _scores(self, out: Generated) -> np.ndarray:
        q = score_masks(out.utts, out.mask_arrays(), self.train_metrics, self.plan.mask_floor)
        for spec, row in zip(self.train_metrics, q):
            self._train_q.setdefault(spec.name, []).append(float(np.mean(row)))
        return q

    def _step_metricgan(self, batch: list[Utterance]):
        plan, st = self.plan, self.state
        spec = self.train_metrics[0]
        disc = st.discriminators[spec.name]
        out = generate(st.generator, batch, plan.mask_floor)
        q = self._scores(out)[0]
        for _ in range(plan.d_steps):
            self._losses_d.append(_metricgan_d_step(disc, out, q, plan, st.iteration))
        if plan.lr_g > 0:
            self._losses_g.append(_metricgan_g_step(st.generator, disc, out, plan.targets[0], plan, st.iteration))

    def _step_multimetric(self, batch: list[Utterance]):
        plan, st = self.plan, self.state
        out = generate(st.generator, batch, plan.mask_floor)
        q = self._scores(out)
        achieved = q.mean(axis=1)
        i = multimetric_schedule(list(achieved), plan.targets)
        chosen = st.discriminators[self.train_metrics[i].name]
        if plan.lr_g > 0:
            self._losses_g.append(_metricgan_g_step(st.generator, chosen, out, plan.targets[i], plan, st.iteration))
        for n, spec in enumerate(self.train_metrics):
            for _ in range(plan.d_steps):
                self._losses_d.append(_metricgan_d_step(st.discriminators[spec.name], out, q[n], plan,
                                                        st.iteration))
        self.last_selected = i

    def step(self, batch: list[Utterance]):
        fam = self.plan.loss_family
        try:
            if fam == "irm_l1":
                self._step_irm(batch)
            elif fam == "cgan":
                self._step_cgan(batch)
            elif len(self.train_metrics) == 1:
                self._step_metricgan(batch)
            else:
                self._step_multimetric(batch)
        except DivergenceError:
            raise
        except NumericalError as exc:
            raise DivergenceError(f"diverged at iteration {self.state.iteration}: {exc}") from exc
        self.state.iteration += 1

    def train_epoch(self) -> TrainState:
        st = self.state
        for batch in batches(self.corpus.train, self.plan.batch_size, st.rng):
            if self.done:
                break
            self.step(batch)
            if self.plan.eval_every and st.iteration % self.plan.eval_every == 0:
                self.evaluate()
        st.epoch += 1
        if not self.plan.eval_every:
            self.evaluate()
        return st

    def fit(self) -> TrainState:
        if not self.state.curves:
            self.evaluate()
        for _ in range(self.plan.epochs):
            if self.done:
                break
            self.train_epoch()
        return self.state


def train_epoch(plan: TrainPlan, state: TrainState, corpus: TrainingCorpus, **kwargs) -> TrainState:
    return Trainer(plan, state, corpus, **kwargs).train_epoch()


def train_multimetric_epoch(plan: TrainPlan, state: TrainState, corpus: TrainingCorpus, **kwargs) -> TrainState:
    if plan.loss_family != "metricgan" or len(plan.metrics) < 2:
        raise ValueError("multi-metric training needs metricgan with at least two metrics")
    return Trainer(plan, state, corpus, **kwargs).train_epoch()
