"""Analyses over benchmark records and a deterministic SVG/CSV report."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bench import BenchmarkRecord

MARKERS = {"ssd": "circle", "faster_rcnn": "square", "rfcn": "triangle"}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
DEFAULT_SIMILARITY = 0.95


# ----------------------------------------------------------------- frontier


def dominates(a, b, time_key: str = "time_ms_mean", acc_key: str = "map") -> bool:
    ta, tb = getattr(a, time_key), getattr(b, time_key)
    ma, mb = getattr(a, acc_key), getattr(b, acc_key)
    return ta <= tb and ma >= mb and (ta < tb or ma > mb)


def pareto_frontier(records, time_key: str = "time_ms_mean", acc_key: str = "map") -> list:
    """Records not dominated in (lower time, higher accuracy), sorted by time.

    Sweeps records by time (accuracy descending within equal times) and keeps
    each one that beats the best accuracy seen so far. Exact duplicates are
    all kept, since none strictly dominates another.
    """
    recs = list(records)
    order = sorted(range(len(recs)), key=lambda i: (getattr(recs[i], time_key), -getattr(recs[i], acc_key), i))
    out, best, last = [], -math.inf, None
    for i in order:
        r = recs[i]
        key = (getattr(r, time_key), getattr(r, acc_key))
        if getattr(r, acc_key) > best or key == last:
            out.append(r)
            best = max(best, getattr(r, acc_key))
            last = key
    return out


def bang_for_buck(record, acc_key: str = "map") -> float:
    """mAP percentage points per millisecond."""
    t = record.time_ms_mean
    if not t > 0:
        raise ValueError("time must be positive")
    return 100.0 * getattr(record, acc_key) / t


def linear_fit_r2(xs, ys) -> tuple[float, float, float]:
    """Least-squares line ``y = slope * x + intercept`` and its R^2.

    Raises:
        ValueError: when fewer than two distinct x values are given.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or len(np.unique(x)) < 2:
        raise ValueError("need at least two distinct x values")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    slope = float(np.dot(dx, y - ym) / np.dot(dx, dx))
    intercept = float(ym - slope * xm)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - ym) ** 2))
    if ss_tot == 0.0:
        return slope, intercept, 1.0 if ss_res == 0.0 else 0.0
    return slope, intercept, min(1.0, max(0.0, 1.0 - ss_res / ss_tot))


def flops_time_ratio(records) -> dict[str, float]:
    """Mean of ``flops / (time_ms * 1e6)`` per extractor, in first-seen order."""
    groups: dict[str, list[float]] = {}
    for r in records:
        groups.setdefault(r.extractor, []).append(r.flops / (r.time_ms_mean * 1e6))
    return {k: float(np.mean(v)) for k, v in groups.items()}


# ----------------------------------------------------------------- ensemble


@dataclass(frozen=True)
class ModelAPVector:
    model_id: str
    ap: tuple[float, ...]
    map: float

    def __post_init__(self):
        object.__setattr__(self, "ap", tuple(float(v) for v in self.ap))


def cosine_similarity(a, b) -> float:
    a = np.nan_to_num(np.asarray(a, dtype=np.float64))
    b = np.nan_to_num(np.asarray(b, dtype=np.float64))
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 1.0 if na == nb else 0.0
    return float(np.dot(a, b) / (na * nb))


def select_diverse_ensemble(candidates, k: int, similarity_threshold: float = DEFAULT_SIMILARITY) -> list[str]:
    """Greedy selection by mAP, skipping models too similar to one already chosen.

    Candidates are ranked by validation mAP (descending, ties by id); a
    candidate is skipped when its per-category AP vector has cosine
    similarity above ``similarity_threshold`` with any selected vector.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidates")
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0.0 < similarity_threshold < 1.0:
        raise ValueError("similarity_threshold must lie in (0, 1)")
    chosen: list[ModelAPVector] = []
    for c in sorted(candidates, key=lambda c: (-c.map, c.model_id)):
        if len(chosen) == k:
            break
        if all(cosine_similarity(c.ap, s.ap) <= similarity_threshold for s in chosen):
            chosen.append(c)
    return [c.model_id for c in chosen]


# -------------------------------------------------------------------- report


def _fmt(v: float) -> str:
    if isinstance(v, float) and not math.isfinite(v):
        return "nan"
    s = f"{v:.2f}"
    return s.rstrip("0").rstrip(".") if "." in s else s


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _marker(shape: str, x: float, y: float, color: str) -> str:
    if shape == "square":
        return f'<rect x="{x - 4:.2f}" y="{y - 4:.2f}" width="8" height="8" fill="{color}"/>'
    if shape == "triangle":
        return f'<polygon points="{x:.2f},{y - 5:.2f} {x - 5:.2f},{y + 4:.2f} {x + 5:.2f},{y + 4:.2f}" fill="{color}"/>'
    return f'<circle cx="{x:.2f}" cy="{y:.2f}" r="4" fill="{color}"/>'


def scatter_svg(points, xlabel: str, ylabel: str, title: str, polyline=None, logx: bool = False) -> str:
    """Render ``points`` (x, y, marker shape, color) as an SVG 1.1 scatter plot."""
    width, height = 640, 480
    left, right, top, bottom = 70, 170, 40, 60
    pw, ph = width - left - right, height - top - bottom
    fx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    xs = [fx(p[0]) for p in points if np.isfinite(p[0]) and np.isfinite(p[1])]
    ys = [p[1] for p in points if np.isfinite(p[0]) and np.isfinite(p[1])]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    padx, pady = 0.05 * (x1 - x0), 0.05 * (y1 - y0)
    x0, x1, y0, y1 = x0 - padx, x1 + padx, y0 - pady, y1 + pady

    def sx(v):
        return left + (fx(v) - x0) / (x1 - x0) * pw

    def sy(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + pw / 2:.2f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{title}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _nice_ticks(y0, y1):
        if y0 <= t <= y1:
            y = sy(t)
            out.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
            out.append(
                f'<text x="{left - 7}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">{_fmt(t)}</text>'
            )
    for t in _nice_ticks(x0, x1):
        if x0 <= t <= x1:
            x = left + (t - x0) / (x1 - x0) * pw
            label = _fmt(10**t) if logx else _fmt(t)
            out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 4}" stroke="black"/>')
            out.append(
                f'<text x="{x:.2f}" y="{top + ph + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{label}</text>'
            )
    out.append(
        f'<text x="{left + pw / 2:.2f}" y="{height - 18}" text-anchor="middle" font-family="sans-serif" font-size="13">{xlabel}</text>'
    )
    out.append(
        f'<text x="18" y="{top + ph / 2:.2f}" text-anchor="middle" font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {top + ph / 2:.2f})">{ylabel}</text>'
    )
    if polyline:
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in polyline)
        out.append(f'<polyline points="{pts}" fill="none" stroke="#444444" stroke-width="1.5" stroke-dasharray="5,3"/>')
    for x, y, shape, color in points:
        if np.isfinite(x) and np.isfinite(y):
            out.append(_marker(shape, sx(x), sy(y), color))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _legend(svg: str, entries) -> str:
    """Append a legend (label, marker shape, color) to the right margin."""
    x, y = 640 - 160, 50
    items = []
    for i, (label, shape, color) in enumerate(entries):
        yy = y + 18 * i
        items.append(_marker(shape, x + 6, yy, color))
        items.append(f'<text x="{x + 16}" y="{yy + 4}" font-family="sans-serif" font-size="11">{label}</text>')
    return svg.replace("</svg>\n", "\n".join(items) + "\n</svg>\n")


def extractor_colors(records) -> dict[str, str]:
    names = sorted({r.extractor for r in records})
    return {n: PALETTE[i % len(PALETTE)] for i, n in enumerate(names)}


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _plot(records, colors, xkey: str, ykey: str, xlabel: str, ylabel: str, title: str, frontier=False, logx=False):
    pts = [(float(getattr(r, xkey)), float(getattr(r, ykey)), MARKERS.get(r.meta_arch, "circle"), colors[r.extractor]) for r in records]
    line = None
    if frontier:
        line = [(float(getattr(r, xkey)), float(getattr(r, ykey))) for r in pareto_frontier(records, xkey, ykey)]
    svg = scatter_svg(pts, xlabel, ylabel, title, line, logx)
    metas = sorted({r.meta_arch for r in records})
    legend = [(m, MARKERS.get(m, "circle"), "#555555") for m in metas]
    legend += [(e, "circle", c) for e, c in sorted(colors.items())]
    return _legend(svg, legend)


def emit_report(records, out_dir) -> list[Path]:
    """Write scatter plots and their companion CSV tables into ``out_dir``.

    Raises:
        ValueError: on an empty record list.
        OSError: when ``out_dir`` cannot be created or written.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    colors = extractor_colors(records)
    front = {id(r) for r in pareto_frontier(records)}
    ratios = flops_time_ratio(records)

    cols = list(BenchmarkRecord.columns())
    rows = [[getattr(r, c) for c in cols] + [int(id(r) in front), bang_for_buck(r), r.flops / (r.time_ms_mean * 1e6)] for r in records]
    _write_csv(out / "records_derived.csv", cols + ["on_frontier", "bang_for_buck", "flops_time_ratio"], rows)
    written.append(out / "records_derived.csv")

    plots = [
        ("accuracy_vs_time", "time_ms_mean", "map", "time per image (ms)", "mAP@[.5:.95]", "Accuracy vs time", True, False),
        ("accuracy_vs_flops", "flops", "map", "multiply-adds", "mAP@[.5:.95]", "Accuracy vs FLOPs", False, True),
        ("flops_vs_time", "time_ms_mean", "flops", "time per image (ms)", "multiply-adds", "FLOPs vs time", False, False),
        ("memory_vs_time", "time_ms_mean", "memory_bytes", "time per image (ms)", "memory (bytes)", "Memory vs time", False, False),
        ("map75_vs_map", "map", "map75", "mAP@[.5:.95]", "mAP@.75", "mAP@.75 vs mAP", False, False),
        ("map50_vs_map", "map", "map50", "mAP@[.5:.95]", "mAP@.5", "mAP@.5 vs mAP", False, False),
    ]
    for name, xk, yk, xl, yl, title, frontier, logx in plots:
        svg = _plot(records, colors, xk, yk, xl, yl, title, frontier, logx)
        (out / f"{name}.svg").write_text(svg)
        _write_csv(
            out / f"{name}.csv",
            ["config_id", "meta_arch", "extractor", xk, yk],
            [[r.config_id, r.meta_arch, r.extractor, getattr(r, xk), getattr(r, yk)] for r in records],
        )
        written += [out / f"{name}.svg", out / f"{name}.csv"]

    two_stage = [r for r in records if r.meta_arch != "ssd"]
    if two_stage:
        svg = _plot(two_stage, colors, "num_proposals", "map", "proposals", "mAP@[.5:.95]", "Accuracy vs proposals")
        (out / "proposals_vs_map.svg").write_text(svg)
        _write_csv(
            out / "proposals_vs_map.csv",
            ["config_id", "meta_arch", "extractor", "num_proposals", "map", "time_ms_mean"],
            [[r.config_id, r.meta_arch, r.extractor, r.num_proposals, r.map, r.time_ms_mean] for r in two_stage],
        )
        written += [out / "proposals_vs_map.svg", out / "proposals_vs_map.csv"]

    _write_csv(out / "flops_time_ratio.csv", ["extractor", "flops_time_ratio"], list(ratios.items()))
    written.append(out / "flops_time_ratio.csv")

    corr = []
    finite = [r for r in records if all(math.isfinite(v) for v in (r.map, r.map50, r.map75))]
    for yk in ("map50", "map75"):
        if len({r.map for r in finite}) >= 2:
            slope, icpt, r2 = linear_fit_r2([r.map for r in finite], [getattr(r, yk) for r in finite])
            corr.append([yk, "map", slope, icpt, r2])
    if len({r.time_ms_mean for r in records}) >= 2:
        slope, icpt, r2 = linear_fit_r2([r.time_ms_mean for r in records], [float(r.memory_bytes) for r in records])
        corr.append(["memory_bytes", "time_ms_mean", slope, icpt, r2])
    _write_csv(out / "correlations.csv", ["y", "x", "slope", "intercept", "r2"], corr)
    written.append(out / "correlations.csv")
    return written
