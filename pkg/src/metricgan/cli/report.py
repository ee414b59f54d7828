"""CSV tables and a dependency-free SVG line plot."""
from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..train.plan import CurvePoint

CURVE_FIELDS = ("iteration", "split", "metric", "mean_normalized_score", "loss_g", "loss_d")
SCORE_FIELDS = ("utterance_id", "split", "snr_db", "metric", "raw", "normalized")


def _num(x) -> str:
    return repr(float(x))


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def curves_csv(points: Sequence[CurvePoint]) -> str:
    return csv_text(CURVE_FIELDS, ([p.iteration, p.split, p.metric, _num(p.score), _num(p.loss_g), _num(p.loss_d)]
                                   for p in points))


def read_curves(path) -> list[CurvePoint]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [CurvePoint(int(r["iteration"]), r["split"], r["metric"], float(r["mean_normalized_score"]),
                           float(r["loss_g"]), float(r["loss_d"])) for r in csv.DictReader(fh)]


def scores_csv(rows: Iterable[tuple]) -> str:
    """rows of (utterance_id, split, snr_db, metric, raw, normalized)."""
    return csv_text(SCORE_FIELDS, ([u, s, _num(snr), m, _num(raw), _num(norm)] for u, s, snr, m, raw, norm in rows))


def read_scores(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{**r, "snr_db": float(r["snr_db"]), "raw": float(r["raw"]), "normalized": float(r["normalized"])}
                for r in csv.DictReader(fh)]


def report_rows(scores: Sequence[dict], metrics: Sequence[str]) -> tuple[list[str], list[list]]:
    """Table-1 shaped summary: one row per (split, SNR), high SNR first, then an Avg row per split.

    Avg is the mean over utterances, i.e. per-SNR means weighted by row counts.
    """
    header = ["split", "snr_db", "n"]
    for m in metrics:
        header += [f"{m}_raw", f"{m}_normalized"]
    cells = defaultdict(lambda: defaultdict(list))
    for r in scores:
        cells[(r["split"], r["snr_db"])][r["metric"]].append((r["raw"], r["normalized"]))
    rows = []
    for split in dict.fromkeys(r["split"] for r in scores):
        snrs = sorted({snr for s, snr in cells if s == split}, reverse=True)
        for snr in snrs:
            cell = cells[(split, snr)]
            row = [split, f"{snr:g}", len(cell[metrics[0]])]
            for m in metrics:
                vals = np.array(cell[m])
                row += [_num(vals[:, 0].mean()), _num(vals[:, 1].mean())]
            rows.append(row)
        row = [split, "Avg", sum(len(cells[(split, snr)][metrics[0]]) for snr in snrs)]
        for m in metrics:
            vals = np.array([v for snr in snrs for v in cells[(split, snr)][m]])
            row += [_num(vals[:, 0].mean()), _num(vals[:, 1].mean())]
        rows.append(row)
    return header, rows


# ------------------------------------------------------------------- SVG

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def line_plot_svg(series: dict[str, Sequence[tuple[float, float]]], title: str = "",
                  xlabel: str = "iteration", ylabel: str = "score",
                  width: int = 640, height: int = 400, hlines: dict[str, float] | None = None) -> str:
    """Standalone SVG with one polyline per named series."""
    ml, mr, mt, mb = 60, 150, 30, 45
    pw, ph = width - ml - mr, height - mt - mb
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts if math.isfinite(y)]
    ys += list((hlines or {}).values())
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + (1 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{ml + pw / 2:.1f}" y="18" text-anchor="middle" font-size="13">{_esc(title)}</text>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>']
    for k in range(5):
        yv = y0 + (y1 - y0) * k / 4
        xv = x0 + (x1 - x0) * k / 4
        out.append(f'<line x1="{ml}" x2="{ml + pw}" y1="{py(yv):.1f}" y2="{py(yv):.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{ml - 5}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.3f}</text>')
        out.append(f'<text x="{px(xv):.1f}" y="{mt + ph + 15}" text-anchor="middle">{xv:g}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {mt + ph / 2:.1f})">{_esc(ylabel)}</text>')
    items = list(series.items())
    for i, (name, pts) in enumerate(items):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts if math.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = mt + 14 * i + 8
        out.append(f'<line x1="{ml + pw + 10}" x2="{ml + pw + 30}" y1="{ly}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 34}" y="{ly + 4}">{_esc(name)}</text>')
    for i, (name, yv) in enumerate((hlines or {}).items()):
        color = _COLORS[(len(items) + i) % len(_COLORS)]
        out.append(f'<line x1="{ml}" x2="{ml + pw}" y1="{py(yv):.1f}" y2="{py(yv):.1f}" stroke="{color}" '
                   f'stroke-dasharray="4 3"/>')
        out.append(f'<text x="{ml + pw + 34}" y="{mt + 14 * (len(items) + i) + 12}">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def curves_svg(points: Sequence[CurvePoint], title: str = "", hlines: dict[str, float] | None = None) -> str:
    series: dict[str, list] = {}
    for p in points:
        series.setdefault(f"{p.split}:{p.metric}", []).append((p.iteration, p.score))
    return line_plot_svg(series, title, ylabel="mean normalized score", hlines=hlines)


def write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(text.encode("utf-8"))
    return path
