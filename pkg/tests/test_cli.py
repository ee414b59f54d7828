import csv
import wave

import numpy as np
import pytest

from metricgan.cli import ConfigError, RunConfig, main
from metricgan.cli.main import iterations_to_target
from metricgan.cli.report import line_plot_svg, read_curves, report_rows
from metricgan.corpus import Manifest
from metricgan.metrics import STOI
from metricgan.signal import Waveform, read_wav, write_wav
from metricgan.train.inference import Enhancer, identity_enhancer

TINY = """
[corpus]
clean_counts = 4,2,2
noise_families = white,babble
duration_s = 0.5
noise_duration_s = 1.0
train_snrs = 0,5
validation_snrs = 0,10
test_snrs = -6,6

[generator]
hidden = 16

[discriminator]
channels = 4
kernels = 3
dense = 4

[train]
epochs = 1
batch_size = 4
eval_metrics = stoi
"""


def write_cfg(tmp_path, extra="", name="cfg.ini"):
    p = tmp_path / name
    p.write_text(TINY + extra)
    return str(p)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def tree(root):
    return sorted(str(p.relative_to(root)) for p in root.rglob("*") if p.is_file())


@pytest.fixture
def mixed(tmp_path):
    out = tmp_path / "out"
    cfg = write_cfg(tmp_path)
    assert main(["mix", "--config", cfg, "--out", str(out)]) == 0
    return cfg, out


# ------------------------------------------------------------ config

def test_config_defaults_and_echo_hash(tmp_path):
    cfg = RunConfig.defaults()
    again = RunConfig.parse(cfg.to_text())
    assert again.digest() == cfg.digest()
    assert again.plan() == cfg.plan()
    custom = RunConfig.parse(TINY)
    assert RunConfig.parse(custom.to_text()).digest() == custom.digest()
    assert custom["corpus"]["clean_counts"] == (4, 2, 2)
    assert cfg.discriminator_config().channels == (8, 16)


@pytest.mark.parametrize("text", [
    "[train]\nbogus = 1\n",
    "[nosuch]\na = 1\n",
    "[train]\nepochs = ten\n",
    "[dsp]\nhop = 1024\n",
    "[corpus]\nnoise_families = white,traffic\n",
    "[assign]\nscores = 0.3,1.5\n",
])
def test_config_rejects_bad_input(text, tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.parse(text)
    p = tmp_path / "bad.ini"
    p.write_text(text)
    assert main(["mix", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_missing_config_file_is_config_error(tmp_path):
    assert main(["train", "--config", str(tmp_path / "none.ini"), "--out", str(tmp_path)]) == 2


# ------------------------------------------------------------ mix

def test_mix_default_row_count():
    from metricgan.corpus import build_manifest
    cfg = RunConfig.defaults()
    man = build_manifest(cfg.synth_clean(), cfg.synth_noise(), cfg.recipe())
    assert len(man.split("train")) == 200 * 6 * 5 == 6000


def test_mix_outputs_and_idempotent(mixed, capsys):
    cfg, out = mixed
    corpus = out / "corpus"
    man = Manifest.read(corpus / "manifest.csv")
    assert len(man.split("train")) == 4 * 2 * 2
    mixtures = rows(corpus / "mixtures.csv")
    header, body = mixtures[0], mixtures[1:]
    assert len(body) == len(man)
    for r in body:
        rec = dict(zip(header, r))
        assert abs(float(rec["measured_snr_db"]) - float(rec["snr_db"])) < 0.01
        assert (corpus / rec["noisy_wav"]).exists()
    before = {p: (corpus / p).read_bytes() for p in tree(corpus)}
    capsys.readouterr()
    assert main(["mix", "--config", cfg, "--out", str(out)]) == 0
    assert "up to date" in capsys.readouterr().out
    assert {p: (corpus / p).read_bytes() for p in tree(corpus)} == before


def test_mix_same_seed_identical_bytes(tmp_path):
    cfg = write_cfg(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["mix", "--config", cfg, "--out", str(a)]) == 0
    assert main(["mix", "--config", cfg, "--out", str(b)]) == 0
    ta, tb = tree(a / "corpus"), tree(b / "corpus")
    assert ta == tb
    assert all((a / "corpus" / p).read_bytes() == (b / "corpus" / p).read_bytes() for p in ta)
    c = tmp_path / "c"
    assert main(["mix", "--config", cfg, "--out", str(c), "--seed", "9"]) == 0
    assert (c / "corpus" / "manifest.csv").read_bytes() != (a / "corpus" / "manifest.csv").read_bytes()


def test_mix_missing_noise_dir_no_partial_files(tmp_path):
    cfg = write_cfg(tmp_path, f"\n[paths]\nnoise_dir = {tmp_path / 'missing'}\nsynth_fallback = false\n")
    out = tmp_path / "out"
    assert main(["mix", "--config", cfg, "--out", str(out)]) == 3
    assert not out.exists() or not any(out.rglob("*"))


def test_mix_from_wav_directories(tmp_path):
    rng = np.random.default_rng(0)
    clean_dir, noise_dir = tmp_path / "clean", tmp_path / "noise"
    for i in range(8):
        t = np.arange(8000) / 16000
        write_wav(clean_dir / f"c{i}.wav", Waveform(0.2 * np.sin(2 * np.pi * (200 + 30 * i) * t), 16000))
    for i in range(6):
        write_wav(noise_dir / f"n{i}.wav", Waveform(rng.uniform(-0.2, 0.2, 12000), 16000))
    cfg = write_cfg(tmp_path, f"\n[paths]\nclean_dir = {clean_dir}\nnoise_dir = {noise_dir}\n"
                              "synth_fallback = false\n", "wav.ini")
    text = open(cfg).read().replace("clean_counts = 4,2,2", "clean_counts = 4,2,2\nnoise_counts = 3,2,1")
    open(cfg, "w").write(text)
    out = tmp_path / "out"
    assert main(["mix", "--config", cfg, "--out", str(out)]) == 0
    man = Manifest.read(out / "corpus" / "manifest.csv")
    assert len(man.split("train")) == 4 * 3 * 2
    man.check_files()
    assert not any(r.clean.startswith("/") for r in man.rows)


# ------------------------------------------------------------ train

def test_train_irm_has_no_discriminator(mixed):
    cfg, out = mixed
    text = open(cfg).read().replace("[train]\n", "[train]\nloss_family = irm_l1\n")
    open(cfg, "w").write(text)
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    run = out / "runs" / "irm_l1"
    files = tree(run)
    assert "generator.ckpt" in files and not any(f.startswith("discriminator") for f in files)
    echoed = RunConfig.load(run / "config.ini")
    assert echoed.digest() == RunConfig.load(cfg).digest()
    assert echoed.digest() in (run / "meta.txt").read_text()


def test_train_metricgan_curves_and_determinism(mixed, tmp_path):
    cfg, out = mixed
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    run = out / "runs" / "metricgan-stoi"
    files = tree(run)
    for f in ("curves.csv", "curves.svg", "generator.ckpt", "generator_best.ckpt", "discriminator_stoi.ckpt",
              "plan.txt", "config.ini", "meta.txt"):
        assert f in files
    curves = read_curves(run / "curves.csv")
    assert {c.metric for c in curves} == {"stoi"}
    assert rows(run / "curves.csv")[0] == ["iteration", "split", "metric", "mean_normalized_score", "loss_g",
                                           "loss_d"]
    first = {f: (run / f).read_bytes() for f in files}
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    assert {f: (run / f).read_bytes() for f in tree(run)} == first
    assert (run / "curves.svg").read_text().startswith("<svg")
    other = tmp_path / "other"
    (other / "corpus").mkdir(parents=True)
    for f in tree(out / "corpus"):
        dest = other / "corpus" / f
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_bytes((out / "corpus" / f).read_bytes())
    assert main(["train", "--config", cfg, "--out", str(other), "--seed", "3"]) == 0
    assert (other / "runs" / "metricgan-stoi" / "generator.ckpt").read_bytes() != first["generator.ckpt"]


def test_train_without_manifest_is_data_error(tmp_path):
    assert main(["train", "--config", write_cfg(tmp_path), "--out", str(tmp_path / "o")]) == 3


# ------------------------------------------------------------ enhance / evaluate

def test_enhance_lengths_identity_and_errors(tmp_path):
    noisy = Waveform(np.random.default_rng(0).uniform(-0.3, 0.3, 9000), 16000)
    src = write_wav(tmp_path / "in.wav", noisy)
    ckpt = identity_enhancer().save(tmp_path / "ident.ckpt")
    assert main(["enhance", str(src), str(tmp_path / "o.wav"), "--checkpoint", str(ckpt),
                 "--out", str(tmp_path)]) == 0
    back = read_wav(tmp_path / "o.wav")
    assert len(back) == len(noisy) and back.sample_rate == 16000
    assert np.max(np.abs(back.samples - read_wav(src).samples)) <= 2 / 32768
    stereo = tmp_path / "stereo.wav"
    with wave.open(str(stereo), "wb") as fh:
        fh.setnchannels(2)
        fh.setsampwidth(2)
        fh.setframerate(16000)
        fh.writeframes(b"\x00\x00" * 4000)
    assert main(["enhance", str(stereo), "--checkpoint", str(ckpt), "--out", str(tmp_path)]) == 3
    assert main(["enhance", str(src), "--out", str(tmp_path)]) == 2
    (tmp_path / "junk.ckpt").write_bytes(b"junk")
    assert main(["enhance", str(src), "--checkpoint", str(tmp_path / "junk.ckpt"), "--out", str(tmp_path)]) == 3


def test_untrained_generator_halves_magnitudes():
    from metricgan.neural import GeneratorNet
    from metricgan.signal import NormStats, stft
    from metricgan.train.data import DSP
    g = GeneratorNet(seed=0)
    for t in g.params.tensors().values():
        t.data = np.zeros_like(t.data)
    enh = Enhancer(g, NormStats(np.zeros(257), np.ones(257)), DSP())
    x = Waveform(np.random.default_rng(1).uniform(-0.3, 0.3, 8000), 16000)
    out = enh.enhance(x)
    assert np.allclose(stft(out).magnitude, 0.5 * stft(x).magnitude, atol=1e-9)


def test_evaluate_noisy_identity_and_report_integrity(mixed, tmp_path):
    cfg, out = mixed
    assert main(["evaluate", "--config", cfg, "--out", str(out)]) == 0
    noisy_dir = out / "eval" / "noisy-test"
    report = rows(noisy_dir / "report.csv")
    header, body = report[0], report[1:]
    assert [r[1] for r in body] == ["6", "-6", "Avg"]
    scores = rows(noisy_dir / "scores.csv")
    sh, sb = scores[0], scores[1:]
    by_snr = {}
    for r in sb:
        rec = dict(zip(sh, r))
        by_snr.setdefault(float(rec["snr_db"]), []).append(float(rec["normalized"]))
    col = header.index("stoi_normalized")
    for r in body[:-1]:
        assert float(r[col]) == pytest.approx(np.mean(by_snr[float(r[1])]), abs=1e-12)
    weighted = sum(np.mean(v) * len(v) for v in by_snr.values()) / sum(len(v) for v in by_snr.values())
    assert float(body[-1][col]) == pytest.approx(weighted, abs=1e-12)
    ckpt = identity_enhancer().save(tmp_path / "stub" / "ident.ckpt")
    assert main(["evaluate", "--config", cfg, "--out", str(out), "--checkpoint", str(ckpt)]) == 0
    stub = rows(out / "eval" / "stub-ident-test" / "report.csv")
    for a, b in zip(stub[1:], body):
        assert float(a[col]) == pytest.approx(float(b[col]), abs=2e-3)


def test_report_rows_shape():
    keys = ("utterance_id", "split", "snr_db", "metric", "raw", "normalized")
    scores = [dict(zip(keys, r)) for r in [("a", "test", 12.0, "stoi", 0.9, 0.9), ("b", "test", 12.0, "stoi", 0.7, 0.7),
                                           ("c", "test", -12.0, "stoi", 0.4, 0.4)]]
    header, table = report_rows(scores, ["stoi"])
    assert header == ["split", "snr_db", "n", "stoi_raw", "stoi_normalized"]
    assert [r[1] for r in table] == ["12", "-12", "Avg"]
    assert [r[2] for r in table] == [2, 1, 3]
    assert float(table[-1][-1]) == pytest.approx(2.0 / 3.0)


# ------------------------------------------------------------ experiments

def test_assign_score_three_runs(mixed):
    cfg, out = mixed
    assert main(["assign-score", "--config", cfg, "--out", str(out)]) == 0
    root = out / "assign" / "stoi"
    assert sorted(p.name for p in root.iterdir() if p.is_dir()) == ["s0.3", "s0.6", "s1"]
    report = rows(root / "report.csv")
    assert report[0] == ["assigned", "achieved", "iterations_to_target", "status", "iterations"]
    assert [r[0] for r in report[1:]] == ["0.3", "0.6", "1.0"]
    assert all(0.0 <= float(r[1]) <= 1.0 for r in report[1:])


def test_assign_score_preconditions(mixed):
    cfg, out = mixed
    two = open(cfg).read().replace("[train]\n", "[train]\nmetrics = stoi,quality\ntargets = 1,1\n")
    open(cfg, "w").write(two)
    assert main(["assign-score", "--config", cfg, "--out", str(out)]) == 2


def test_multimetric_rejects_single_metric(mixed, capsys):
    cfg, out = mixed
    assert main(["multimetric", "--config", cfg, "--out", str(out)]) == 2
    assert "assign-score" in capsys.readouterr().err


def test_multimetric_report(mixed):
    cfg, out = mixed
    two = open(cfg).read().replace("[train]\n", "[train]\nmetrics = stoi,quality\ntargets = 0.8,0.4\n")
    open(cfg, "w").write(two)
    assert main(["multimetric", "--config", cfg, "--out", str(out)]) == 0
    root = out / "multimetric" / "stoi0.8+quality0.4"
    report = rows(root / "report.csv")
    assert report[0] == ["metric", "assigned", "achieved", "gap", "status"]
    assert [r[0] for r in report[1:]] == ["stoi", "quality", "all"]
    assert report[-1][-1] in ("converged", "not converged")
    assert (root / "run" / "discriminator_quality.ckpt").exists()


def test_iterations_to_target_and_svg():
    curve = [(0, 0.1), (10, 0.25), (20, 0.31)]
    assert iterations_to_target(curve, 0.3, 0.05) == 10
    assert iterations_to_target(curve, 0.9, 0.05) is None
    svg = line_plot_svg({"a": curve}, "t", hlines={"target": 0.3})
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>") and "polyline" in svg
