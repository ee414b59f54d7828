"""Acceptance suite: one PASS/FAIL verdict line per criterion.

Each test prints its verdict (visible with ``-s``) and the lines are repeated in
the terminal summary. Runtime limits are part of the verdict. Criteria 3 to 7
train networks and carry the ``slow`` marker.
"""

import csv
import functools
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import VERDICTS
from metricgan.cli import RunConfig, main
from metricgan.corpus import build_manifest
from metricgan.metrics import STOI
from metricgan.train import Trainer, TrainingCorpus, TrainPlan, init_state, multimetric_schedule
from metricgan.train.loops import score_masks

ROOT = Path(__file__).resolve().parents[1]
DESK = RunConfig.defaults()

# iteration budget and learning rates shared by the loss-family comparisons
BUDGET = 600
EVAL_EVERY = 60
COMPARE = dict(lr_g=2e-4, lr_d=2e-4)


def verdict(n: int, ok: bool, detail: str, elapsed: float, limit: float | None = None):
    within = limit is None or elapsed <= limit
    passed = bool(ok) and within
    timing = f"{elapsed:.0f} s" + (f" of {limit:.0f} s allowed" if limit is not None else "")
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'} [{timing}] {detail}"
    if not within:
        line += " (over the runtime limit)"
    print(line)
    VERDICTS[n] = line
    assert passed, line


def run_pytest(*args) -> tuple[int, str]:
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *args],
                          cwd=ROOT, capture_output=True, text=True)
    lines = [ln for ln in proc.stdout.strip().splitlines() if ln.strip()]
    return proc.returncode, lines[-1] if lines else proc.stderr.strip()


@functools.lru_cache(maxsize=None)
def desk_corpus() -> TrainingCorpus:
    man = build_manifest(DESK.synth_clean(), DESK.synth_noise(), DESK.recipe())
    return TrainingCorpus.from_manifest(man, dsp=DESK.dsp())


@functools.lru_cache(maxsize=None)
def noisy_baseline() -> float:
    val = desk_corpus().validation
    ones = [np.ones_like(u.noisy_mag) for u in val]
    return float(score_masks(val, ones, [STOI], DESK["dsp"]["mask_floor"]).mean())


@functools.lru_cache(maxsize=None)
def train_curve(family: str, seed: int) -> tuple[tuple[int, float], ...]:
    plan = DESK.plan(loss_family=family, seed=seed, metrics=("stoi",), targets=(1.0,), eval_metrics=("stoi",),
                     epochs=1000, max_iterations=BUDGET, eval_every=EVAL_EVERY, **COMPARE)
    state = init_state(plan, DESK.generator_config(), DESK.discriminator_config())
    Trainer(plan, state, desk_corpus()).fit()
    return tuple(state.curve("stoi"))


def fmt_curve(curve) -> str:
    return " ".join(f"{s:.3f}" for _, s in curve)


# ---------------------------------------------------------------------- 1 and 2

def test_criterion_1_numerics_suite():
    t0 = time.time()
    code, summary = run_pytest(
        "tests/test_neural.py", "tests/test_signal.py",
        "-k", "gradient or end_to_end or spectral_norm or istft_roundtrip")
    verdict(1, code == 0, f"gradient, STFT round-trip and spectral-norm checks: {summary}",
            time.time() - t0, 120)


def test_criterion_2_metric_oracle_suite():
    t0 = time.time()
    code, summary = run_pytest("tests/test_metrics.py", "-k", "stoi_identity or brute_force or monotone_in_snr")
    verdict(2, code == 0, f"STOI identity, brute-force oracle and SNR monotonicity: {summary}",
            time.time() - t0, 60)


# ---------------------------------------------------------------------- 3

@pytest.mark.slow
def test_criterion_3_surrogate_fidelity():
    t0 = time.time()
    corpus = desk_corpus()
    # a spread of clean x noise x SNR rows for D to fit, and unseen validation rows to score it on
    train = [corpus.train[i] for i in range(0, len(corpus.train), len(corpus.train) // 32)][:32]
    held_out = corpus.validation[::6]
    small = TrainingCorpus.from_utterances(train, held_out, corpus.stats)
    details, ok = [], True
    for seed in (0, 1, 2):
        plan = DESK.plan(loss_family="metricgan", metrics=("stoi",), targets=(1.0,), eval_metrics=(),
                         seed=seed, lr_g=0.0)
        state = init_state(plan, DESK.generator_config(), DESK.discriminator_config())
        before = state.generator.params.arrays()
        tr = Trainer(plan, state, small)
        errs = [tr.surrogate_error(held_out, "stoi")]
        for _ in range(5):
            tr.train_epoch()
            errs.append(tr.surrogate_error(held_out, "stoi"))
        frozen = all(np.array_equal(before[k], v) for k, v in state.generator.params.arrays().items())
        falling = all(b < a for a, b in zip(errs, errs[1:]))
        ok &= frozen and falling
        details.append(f"seed {seed}: " + " ".join(f"{e:.4f}" for e in errs))
    verdict(3, ok, "held-out |D - Q'| per epoch with G frozen; " + "; ".join(details), time.time() - t0, 300)


# ---------------------------------------------------------------------- 4 and 5

@pytest.mark.slow
def test_criterion_4_learning_efficiency():
    t0 = time.time()
    noisy = noisy_baseline()
    ok, details = True, [f"noisy {noisy:.3f}"]
    for seed in (0, 1):
        irm = train_curve("irm_l1", seed)
        mg = train_curve("metricgan", seed)
        assert [it for it, _ in irm] == [it for it, _ in mg]
        late = [(it, a, b) for (it, a), (_, b) in zip(mg, irm) if it >= 0.2 * BUDGET]
        ahead = all(a >= b for _, a, b in late)
        final = mg[-1][1]
        ok &= ahead and final >= noisy + 0.03
        details.append(f"seed {seed}: metricgan [{fmt_curve(mg)}] irm_l1 [{fmt_curve(irm)}] "
                       f"ahead after 20%: {ahead}, final gain {final - noisy:+.3f}")
    verdict(4, ok, "; ".join(details), time.time() - t0, 1800)


@pytest.mark.slow
def test_criterion_5_cgan_parity():
    t0 = time.time()
    irm = train_curve("irm_l1", 0)[-1][1]
    cgan = train_curve("cgan", 0)[-1][1]
    verdict(5, abs(cgan - irm) <= 0.02, f"final validation STOI cgan {cgan:.3f}, irm_l1 {irm:.3f}, "
            f"difference {cgan - irm:+.3f} (band +-0.02)", time.time() - t0)


# ---------------------------------------------------------------------- 6 to 8

EXPERIMENT_CFG = """
[discriminator]
channels = 8,8
kernels = 5,5

[train]
eval_metrics = stoi
epochs = 1000
max_iterations = {iterations}
eval_every = {every}
train_limit = 0
validation_limit = 30
"""


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def desk_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    assert main(["mix", "--out", str(out)]) == 0
    return out


@pytest.mark.slow
def test_criterion_6_score_assignment(desk_out, tmp_path):
    t0 = time.time()
    cfg = tmp_path / "assign.ini"
    cfg.write_text(EXPERIMENT_CFG.format(iterations=500, every=50) + "\n[assign]\nscores = 0.3,0.6,1.0\n")
    assert main(["assign-score", "--config", str(cfg), "--out", str(desk_out)]) == 0
    rows = read_rows(desk_out / "assign" / "stoi" / "report.csv")
    achieved = [float(r["achieved"]) for r in rows]
    hits = [int(r["iterations_to_target"]) if r["iterations_to_target"] else None for r in rows]
    monotone = all(a <= b for a, b in zip(achieved, achieved[1:]))
    first = hits[0] is not None and all(h is None or hits[0] < h for h in hits[1:])
    detail = "; ".join(f"s={r['assigned']}: achieved {float(r['achieved']):.3f}, "
                       f"iterations to target {r['iterations_to_target'] or 'never'}" for r in rows)
    verdict(6, monotone and first, detail, time.time() - t0, 1800)


@pytest.mark.slow
def test_criterion_7_multimetric(desk_out, tmp_path):
    t0 = time.time()
    rng = np.random.default_rng(7)
    brute_ok = True
    for _ in range(1000):
        n = int(rng.integers(2, 6))
        achieved, targets = rng.uniform(0, 1, n), rng.uniform(0, 1, n)
        gaps = np.abs(achieved - targets)
        brute_ok &= multimetric_schedule(list(achieved), list(targets)) == int(np.flatnonzero(gaps == gaps.max())[0])
    status = {}
    for name, targets in (("feasible", FEASIBLE), ("extreme", EXTREME)):
        cfg = tmp_path / f"{name}.ini"
        cfg.write_text(EXPERIMENT_CFG.format(iterations=300, every=30)
                       + f"metrics = stoi,quality\ntargets = {targets[0]},{targets[1]}\n")
        assert main(["multimetric", "--config", str(cfg), "--out", str(desk_out)]) == 0
        run = desk_out / "multimetric" / f"stoi{targets[0]:g}+quality{targets[1]:g}"
        status[name] = {r["metric"]: r for r in read_rows(run / "report.csv")}
    feasible = status["feasible"]
    extreme = status["extreme"]
    ok = (brute_ok and feasible["all"]["status"] == "converged"
          and all(float(feasible[m]["gap"]) <= 0.1 for m in ("stoi", "quality"))
          and extreme["all"]["status"] == "not converged")
    detail = (f"schedule brute force over 1000 vectors: {'ok' if brute_ok else 'mismatch'}; "
              + "; ".join(f"{name} {t}: gaps stoi {float(status[name]['stoi']['gap']):.3f} "
                          f"quality {float(status[name]['quality']['gap']):.3f} -> {status[name]['all']['status']}"
                          for name, t in (("feasible", FEASIBLE), ("extreme", EXTREME))))
    verdict(7, ok, detail, time.time() - t0, 2400)


FEASIBLE = (0.6, 0.3)
EXTREME = (1.0, 0.0)

DETERMINISM_CFG = """
[corpus]
clean_counts = 6,3,3
noise_families = white,babble,hum
duration_s = 0.5
noise_duration_s = 1.0

[generator]
hidden = 16

[discriminator]
channels = 4
kernels = 3
dense = 4

[train]
loss_family = {family}
epochs = 2
batch_size = 4
eval_metrics = stoi,quality

[assign]
scores = 0.3,1.0

[evaluate]
split = validation
"""


def snapshot(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.suffix in (".ckpt", ".csv", ".wav", ".txt", ".ini", ".svg")}


def test_criterion_8_determinism(tmp_path):
    t0 = time.time()
    configs = {}
    for family in ("metricgan", "cgan", "irm_l1"):
        configs[family] = tmp_path / f"{family}.ini"
        configs[family].write_text(DETERMINISM_CFG.format(family=family))
    cfg = configs["metricgan"]
    trees = []
    out = tmp_path / "out"
    for k in range(2):
        codes = [main(["mix", "--config", str(cfg), "--out", str(out), "--seed", "5"])]
        for family, path in configs.items():
            codes.append(main(["train", "--config", str(path), "--out", str(out), "--seed", "9"]))
        ckpt = out / "runs" / "metricgan-stoi" / "generator.ckpt"
        noisy = sorted((out / "corpus" / "noisy").glob("*.wav"))[0]
        codes.append(main(["enhance", "--config", str(cfg), "--out", str(out), "--checkpoint", str(ckpt),
                           str(noisy), str(out / "enhanced.wav")]))
        codes.append(main(["evaluate", "--config", str(cfg), "--out", str(out), "--checkpoint", str(ckpt)]))
        codes.append(main(["assign-score", "--config", str(cfg), "--out", str(out), "--seed", "9"]))
        assert codes == [0] * len(codes), codes
        trees.append(snapshot(out))
        # the rerun uses the same paths, so echoed arguments match too
        out.rename(tmp_path / f"run{k}")
    same = trees[0].keys() == trees[1].keys() and all(trees[0][k] == trees[1][k] for k in trees[0])
    differing = sorted(k for k in trees[0] if trees[1].get(k) != trees[0][k])
    verdict(8, same, f"{len(trees[0])} checkpoint, CSV, WAV, SVG and echo files compared across two runs"
            + (f", differing: {differing[:5]}" if differing else ", all bit-identical"), time.time() - t0)
