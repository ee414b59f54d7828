"""metricgan command line: mix, train, enhance, evaluate, assign-score, multimetric."""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..corpus import CorpusError, Manifest, build_manifest, measured_snr
from ..metrics import MetricError
from ..neural import CheckpointError, NumericalError
from ..neural.checkpoint import to_bytes
from ..signal import WavError, Waveform, read_wav, write_wav
from ..train import TrainingCorpus, Trainer, init_state
from ..train.inference import Enhancer
from ..train.plan import TrainPlan, resolve_metrics
from . import report
from .config import ConfigError, RunConfig

log = logging.getLogger("metricgan")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
OUT_ENV = "METRICGAN_OUT"
NOTE = ("quality is a segmental-SNR proxy, not PESQ; the generator is a context-window "
        "frame network, not a BLSTM")


class DataError(RuntimeError):
    pass


# ----------------------------------------------------------------- helpers

@contextmanager
def atomic_dir(final: Path):
    """Build a directory under a temporary name, rename into place only on success."""
    final = Path(final)
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{final.name}.", dir=final.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)


def _write(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data if isinstance(data, bytes) else data.encode("utf-8"))
    return path


def _echo(cfg: RunConfig, run: Path, extra: dict | None = None):
    _write(run / "config.ini", cfg.to_text())
    meta = {"config_sha256": cfg.digest(), "seed": cfg["train"]["seed"], "corpus_seed": cfg["corpus"]["seed"],
            "deviations": NOTE, **(extra or {})}
    _write(run / "meta.txt", "".join(f"{k} = {v}\n" for k, v in meta.items()))


def _plan_text(plan: TrainPlan) -> str:
    return "".join(f"{k} = {report._num(v) if isinstance(v, float) else v}\n" for k, v in plan.as_dict().items())


def manifest_path(cfg: RunConfig, out: Path) -> Path:
    return Path(cfg["paths"]["manifest"]) if cfg["paths"]["manifest"] else out / "corpus" / "manifest.csv"


def load_manifest(cfg: RunConfig, out: Path) -> Manifest:
    path = manifest_path(cfg, out)
    if not path.exists():
        raise DataError(f"manifest {path} not found; run `metricgan mix` first or set [paths] manifest")
    man = Manifest.read(path)
    man.check_files()
    return man


def load_corpus(cfg: RunConfig, out: Path) -> TrainingCorpus:
    t = cfg["train"]
    return TrainingCorpus.from_manifest(load_manifest(cfg, out), t["train_limit"] or None,
                                        t["validation_limit"] or None, cfg.dsp())


# ------------------------------------------------------------------- mix

def corpus_sources(cfg: RunConfig):
    p, c = cfg["paths"], cfg["corpus"]
    fallback = p["synth_fallback"]
    if p["clean_dir"] and Path(p["clean_dir"]).is_dir():
        clean = (p["clean_dir"], tuple(c["clean_counts"]))
    elif p["clean_dir"] and not fallback:
        raise DataError(f"clean directory {p['clean_dir']} not found and synth_fallback is off")
    elif not p["clean_dir"] and not fallback:
        raise DataError("no clean directory given and synth_fallback is off")
    else:
        clean = cfg.synth_clean()
    if p["noise_dir"] and Path(p["noise_dir"]).is_dir():
        noise = (p["noise_dir"], tuple(c["noise_counts"]))
    elif p["noise_dir"] and not fallback:
        raise DataError(f"noise directory {p['noise_dir']} not found and synth_fallback is off")
    elif not p["noise_dir"] and not fallback:
        raise DataError("no noise directory given and synth_fallback is off")
    else:
        noise = cfg.synth_noise()
    return clean, noise


def _mix_digest(cfg: RunConfig) -> str:
    text = "".join(f"{s}.{k}={report._num(v) if isinstance(v, float) else v}\n"
                   for s in ("paths", "corpus") for k, v in sorted(cfg[s].items()))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def cmd_mix(cfg: RunConfig, out: Path, args) -> int:
    final = out / "corpus"
    digest = _mix_digest(cfg)
    stamp = final / "mix.sha256"
    if stamp.exists() and stamp.read_text().split()[0] == digest and (final / "manifest.csv").exists():
        print(f"{final}: up to date ({digest[:12]})")
        return EXIT_OK
    clean_src, noise_src = corpus_sources(cfg)
    with atomic_dir(final) as tmp:
        # paths in the manifest are relative to where it will finally live
        man = build_manifest(clean_src, noise_src, cfg.recipe(), root=final)
        man.check_files()
        _write(tmp / "manifest.csv", man.to_csv())
        rows = []
        written_clean = set()
        for row, m in man.render_all():
            noisy_rel = clean_rel = ""
            if cfg["corpus"]["write_wavs"]:
                noisy_rel = f"noisy/{row.utterance_id}.wav"
                write_wav(tmp / noisy_rel, m.noisy)
                ckey = row.clean.replace("synth:", "").replace(":", "_").replace("/", "_")
                clean_rel = f"clean/{Path(ckey).stem}.wav"
                if clean_rel not in written_clean:
                    write_wav(tmp / clean_rel, man.load_source(row.clean))
                    written_clean.add(clean_rel)
            unscaled = Waveform(m.noisy.samples / m.clip_scale, m.noisy.sample_rate)
            clean_unscaled = Waveform(m.clean.samples / m.clip_scale, m.clean.sample_rate)
            rows.append([row.utterance_id, row.split, report._num(row.snr_db),
                         report._num(measured_snr(clean_unscaled, unscaled)), report._num(m.alpha),
                         report._num(m.clip_scale), int(m.clipped), m.offset, noisy_rel, clean_rel])
        _write(tmp / "mixtures.csv", report.csv_text(
            ("utterance_id", "split", "snr_db", "measured_snr_db", "alpha", "clip_scale", "clipped",
             "noise_offset", "noisy_wav", "clean_wav"), rows))
        _echo(cfg, tmp, {"manifest_rows": len(man)})
        _write(tmp / "mix.sha256", digest + "\n")
    counts = {s: len(man.split(s)) for s in ("train", "validation", "test")}
    print(f"{final}: {len(man)} rows {counts}")
    return EXIT_OK


# ----------------------------------------------------------------- train

@dataclass
class RunResult:
    plan: TrainPlan
    trainer: Trainer
    best_score: float
    best_iteration: int
    best_generator: bytes


def _selection_score(plan: TrainPlan, means: dict[str, float]) -> float:
    if plan.loss_family == "metricgan":
        return -float(np.mean([abs(means[m] - s) for m, s in zip(plan.metrics, plan.targets)]))
    return means[plan.eval_metrics[0]]


def run_training(cfg: RunConfig, plan: TrainPlan, corpus: TrainingCorpus, run: Path,
                 custom_metrics=None) -> RunResult:
    state = init_state(plan, cfg.generator_config(), cfg.discriminator_config())
    floor = cfg["dsp"]["mask_floor"]
    best = {"score": -np.inf, "iteration": -1, "bytes": b""}

    def snapshot() -> bytes:
        return Enhancer(state.generator, corpus.stats, cfg.dsp(), floor).to_bytes()

    def on_eval(trainer: Trainer, means: dict[str, float]):
        if not means:
            return
        score = _selection_score(plan, means)
        if score > best["score"]:
            best.update(score=score, iteration=state.iteration, bytes=snapshot())
        log.info("iteration %d: %s", state.iteration, " ".join(f"{k}={v:.4f}" for k, v in means.items()))

    trainer = Trainer(plan, state, corpus, custom_metrics=custom_metrics, on_eval=on_eval)
    trainer.fit()
    run.mkdir(parents=True, exist_ok=True)
    _echo(cfg, run, {"best_iteration": best["iteration"], "iterations": state.iteration})
    _write(run / "plan.txt", _plan_text(plan))
    _write(run / "curves.csv", report.curves_csv(state.curves))
    title = plan.loss_family + (f" {'+'.join(plan.metrics)}" if plan.loss_family == "metricgan" else "")
    _write(run / "curves.svg", report.curves_svg(state.curves, title))
    _write(run / "generator.ckpt", snapshot())
    if best["bytes"]:
        _write(run / "generator_best.ckpt", best["bytes"])
    for name, disc in state.discriminators.items():
        _write(run / f"discriminator_{name}.ckpt", to_bytes(disc.params))
    return RunResult(plan, trainer, best["score"], best["iteration"], best["bytes"])


def run_name(plan: TrainPlan) -> str:
    if plan.loss_family == "metricgan":
        return "metricgan-" + "+".join(plan.metrics)
    return plan.loss_family


def cmd_train(cfg: RunConfig, out: Path, args) -> int:
    plan = cfg.plan()
    corpus = load_corpus(cfg, out)
    final = out / "runs" / run_name(plan)
    with atomic_dir(final) as tmp:
        res = run_training(cfg, plan, corpus, tmp)
    st = res.trainer.state
    print(f"{final}: {st.iteration} iterations, final validation "
          + " ".join(f"{m}={st.latest(m):.4f}" for m in (m.name for m in res.trainer.eval_metrics)))
    return EXIT_OK


# --------------------------------------------------------------- enhance

def cmd_enhance(cfg: RunConfig, out: Path, args) -> int:
    if not args.checkpoint:
        raise ConfigError("enhance needs --checkpoint")
    try:
        enh = Enhancer.load(args.checkpoint)
    except (ValueError, OSError) as exc:
        raise CheckpointError(f"{args.checkpoint}: {exc}") from None
    noisy = read_wav(args.input)
    dest = Path(args.output) if args.output else out / "enhanced" / Path(args.input).name
    enhanced = enh.enhance(noisy)
    tmp = dest.with_name(f".{dest.name}.tmp")
    write_wav(tmp, enhanced)
    os.replace(tmp, dest)
    print(f"{dest}: {len(enhanced)} samples at {enhanced.sample_rate} Hz")
    return EXIT_OK


# -------------------------------------------------------------- evaluate

def score_rows(man: Manifest, split: str, metrics, enhancer: Enhancer | None):
    rows = []
    for row, m in man.render_all(man.split(split)):
        degraded = m.noisy if enhancer is None else enhancer.enhance(m.noisy)
        for spec in metrics:
            raw = spec.fn(degraded, m.clean)
            rows.append((row.utterance_id, split, row.snr_db, spec.name, raw, spec.normalize(raw)))
    return rows


def cmd_evaluate(cfg: RunConfig, out: Path, args) -> int:
    split = cfg["evaluate"]["split"]
    man = load_manifest(cfg, out)
    if not man.split(split):
        raise DataError(f"manifest has no {split} rows")
    metrics = resolve_metrics(cfg["train"]["eval_metrics"])
    enhancer = None
    label = "noisy"
    if args.checkpoint:
        try:
            enhancer = Enhancer.load(args.checkpoint)
        except (ValueError, OSError) as exc:
            raise CheckpointError(f"{args.checkpoint}: {exc}") from None
        label = Path(args.checkpoint).parent.name + "-" + Path(args.checkpoint).stem
    rows = score_rows(man, split, metrics, enhancer)
    final = out / "eval" / f"{label}-{split}"
    with atomic_dir(final) as tmp:
        _write(tmp / "scores.csv", report.scores_csv(rows))
        header, table = report.report_rows(report.read_scores(tmp / "scores.csv"), [m.name for m in metrics])
        _write(tmp / "report.csv", report.csv_text(header, table))
        _echo(cfg, tmp, {"checkpoint": args.checkpoint or "none (noisy mixtures)", "split": split})
    print(f"{final}:")
    print(report.csv_text(header, table), end="")
    return EXIT_OK


# ---------------------------------------------------------- assign-score

def iterations_to_target(curve: list[tuple[int, float]], target: float, tol: float) -> int | None:
    """First checkpoint iteration whose score is within ``tol`` of ``target``."""
    for it, score in curve:
        if abs(score - target) <= tol:
            return it
    return None


def cmd_assign_score(cfg: RunConfig, out: Path, args) -> int:
    metrics = cfg["train"]["metrics"]
    if len(metrics) != 1:
        raise ConfigError("assign-score takes exactly one metric in [train] metrics")
    mu = cfg["assign"]["mu"]
    if mu <= 0:
        raise ConfigError("assign-score needs [assign] mu > 0 (uniform-mask constraint)")
    tol = cfg["assign"]["tolerance"]
    corpus = load_corpus(cfg, out)
    metric = metrics[0]
    final = out / "assign" / metric
    rows, series = [], {}
    with atomic_dir(final) as tmp:
        for s in cfg["assign"]["scores"]:
            plan = cfg.plan(loss_family="metricgan", targets=(s,), mu=mu)
            res = run_training(cfg, plan, corpus, tmp / f"s{s:g}")
            curve = res.trainer.state.curve(metric)
            hit = iterations_to_target(curve, s, tol)
            rows.append([report._num(s), report._num(curve[-1][1]), "" if hit is None else hit,
                         "converged" if hit is not None else "not converged", res.trainer.state.iteration])
            series[f"s={s:g}"] = curve
        header = ("assigned", "achieved", "iterations_to_target", "status", "iterations")
        _write(tmp / "report.csv", report.csv_text(header, rows))
        _write(tmp / "curves.svg", report.line_plot_svg(series, f"assigned {metric} scores",
                                                        ylabel=f"validation {metric} (normalized)",
                                                        hlines={f"target {r[0]}": float(r[0]) for r in rows}))
        _echo(cfg, tmp, {"metric": metric, "tolerance": tol})
    print(f"{final}:")
    print(report.csv_text(header, rows), end="")
    return EXIT_OK


# ------------------------------------------------------------ multimetric

def cmd_multimetric(cfg: RunConfig, out: Path, args) -> int:
    plan = cfg.plan(loss_family="metricgan")
    if len(plan.metrics) < 2:
        raise ConfigError("multimetric needs at least two metrics; for a single metric use assign-score")
    tol = cfg["multimetric"]["tolerance"]
    corpus = load_corpus(cfg, out)
    final = out / "multimetric" / "+".join(f"{m}{s:g}" for m, s in zip(plan.metrics, plan.targets))
    with atomic_dir(final) as tmp:
        res = run_training(cfg, plan, corpus, tmp / "run")
        st = res.trainer.state
        rows, ok = [], True
        for m, s in zip(plan.metrics, plan.targets):
            achieved = st.latest(m)
            gap = abs(achieved - s)
            ok &= gap <= tol
            rows.append([m, report._num(s), report._num(achieved), report._num(gap),
                         "converged" if gap <= tol else "not converged"])
        status = "converged" if ok else "not converged"
        rows.append(["all", "", "", "", status])
        header = ("metric", "assigned", "achieved", "gap", "status")
        _write(tmp / "report.csv", report.csv_text(header, rows))
        series = {m: st.curve(m) for m in plan.metrics}
        _write(tmp / "curves.svg", report.line_plot_svg(
            series, "multi-metric assignment", ylabel="validation score (normalized)",
            hlines={f"target {m}": s for m, s in zip(plan.metrics, plan.targets)}))
        _echo(cfg, tmp, {"tolerance": tol, "status": status})
    print(f"{final}: {status}")
    print(report.csv_text(header, rows), end="")
    return EXIT_OK


# ------------------------------------------------------------------ main

COMMANDS = {
    "mix": cmd_mix,
    "train": cmd_train,
    "enhance": cmd_enhance,
    "evaluate": cmd_evaluate,
    "assign-score": cmd_assign_score,
    "multimetric": cmd_multimetric,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metricgan", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI run configuration (defaults apply when omitted)")
    common.add_argument("--seed", type=int, metavar="U64", help="overrides [corpus] seed for mix, [train] seed otherwise")
    common.add_argument("--out", metavar="DIR", help=f"output root (default ${OUT_ENV} or ./runs)")
    common.add_argument("--checkpoint", metavar="PATH", help="generator checkpoint")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "enhance":
            p.add_argument("input", help="mono 16-bit PCM WAV")
            p.add_argument("output", nargs="?", help="output WAV (default OUT/enhanced/<input name>)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out or os.environ.get(OUT_ENV) or "runs")
    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg = cfg.override("corpus" if args.command == "mix" else "train", "seed", args.seed)
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CorpusError, WavError, MetricError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
