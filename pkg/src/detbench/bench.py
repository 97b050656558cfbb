"""Timing harness, configuration sweeps and the benchmark-record CSV.

Records are appended one row at a time by rewriting the file atomically,
so an interrupted sweep leaves either the old or the new file. A resumed
sweep skips config ids already present.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import threading
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from .evaluation import EvalResult, evaluate
from .model.config import DetectorConfig
from .model.cost import cost_model
from .model.detector import Detector

log = logging.getLogger(__name__)

DEFAULT_WARMUP = 5
DEFAULT_TIMED = 50
TIMING_COLUMNS = ("time_ms_mean", "time_ms_std")

# Timed regions never overlap, even when sweeps run from several threads.
TIMING_LOCK = threading.Lock()


class PartialRecordError(ValueError):
    """A records file holds a malformed row."""


@dataclass(frozen=True)
class BenchmarkRecord:
    config_id: str
    meta_arch: str
    extractor: str
    resolution: int
    stride: int
    num_proposals: int
    map: float
    map50: float
    map75: float
    map_s: float
    map_m: float
    map_l: float
    ar100: float
    time_ms_mean: float
    time_ms_std: float
    flops: int
    memory_bytes: int
    params: int

    @classmethod
    def columns(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def to_row(self) -> list[str]:
        out = []
        for name in self.columns():
            v = getattr(self, name)
            out.append(repr(float(v)) if isinstance(v, float) else str(v))
        return out

    @classmethod
    def from_row(cls, row: dict) -> "BenchmarkRecord":
        kwargs = {}
        for f in fields(cls):
            raw = row[f.name]
            kwargs[f.name] = raw if f.type == "str" else int(raw) if f.type == "int" else float(raw)
        return cls(**kwargs)

    @classmethod
    def build(cls, cfg: DetectorConfig, result: EvalResult, timing: tuple[float, float], cost) -> "BenchmarkRecord":
        return cls(
            config_id=cfg.config_id,
            meta_arch=cfg.meta_arch.value,
            extractor=cfg.extractor,
            resolution=cfg.resolution,
            stride=cfg.stride,
            num_proposals=cfg.num_proposals,
            map=result.map,
            map50=result.map50,
            map75=result.map75,
            map_s=result.map_small,
            map_m=result.map_medium,
            map_l=result.map_large,
            ar100=result.ar100,
            time_ms_mean=timing[0],
            time_ms_std=timing[1],
            flops=cost.total_flops,
            memory_bytes=cost.memory_bytes,
            params=cost.params,
        )


# ------------------------------------------------------------------ records


def _header_line() -> str:
    return ",".join(BenchmarkRecord.columns()) + "\n"


def read_records(path) -> list[BenchmarkRecord]:
    """Load records, tolerating (and dropping) one unterminated trailing row.

    Raises:
        PartialRecordError: on a wrong header or a malformed complete row.
    """
    text = Path(path).read_text()
    if not text:
        return []
    lines = text.splitlines(keepends=True)
    if lines[0] != _header_line():
        raise PartialRecordError(f"{path}: unexpected header {lines[0].strip()!r}")
    if not lines[-1].endswith("\n"):
        log.warning("%s: dropping unterminated trailing row", path)
        lines = lines[:-1]
    records = []
    for i, row in enumerate(csv.DictReader(io.StringIO("".join(lines))), start=2):
        if None in row or any(v is None for v in row.values()):
            raise PartialRecordError(f"{path}:{i}: wrong number of fields")
        try:
            records.append(BenchmarkRecord.from_row(row))
        except ValueError as exc:
            raise PartialRecordError(f"{path}:{i}: {exc}") from exc
    return records


def write_records(records, path) -> None:
    """Write a complete records file atomically."""
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BenchmarkRecord.columns())
    for r in records:
        w.writerow(r.to_row())
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(buf.getvalue())
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


# ------------------------------------------------------------------- timing


def time_model(cfg: DetectorConfig, weights, images, warmup: int = DEFAULT_WARMUP, n: int = DEFAULT_TIMED):
    """Mean and standard deviation (ms) of single-image detect latency, postprocessing included.

    Images are cycled in order; the first ``warmup`` runs are discarded.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    images = list(images)
    if not images:
        raise ValueError("no images to time")
    det = Detector(cfg)
    samples = []
    with TIMING_LOCK, threadpool_limits(1):
        for i in range(warmup + n):
            image = images[i % len(images)]
            t0 = time.perf_counter_ns()
            det.detect(image, weights)
            dt = (time.perf_counter_ns() - t0) / 1e6
            if i >= warmup:
                samples.append(dt)
    return float(np.mean(samples)), float(np.std(samples))


# -------------------------------------------------------------------- sweep


def evaluate_config(cfg: DetectorConfig, weights, scenes) -> EvalResult:
    det = Detector(cfg)
    dets = {i: det.detect(s.image, weights) for i, s in enumerate(scenes)}
    gts = {i: s.groundtruth() for i, s in enumerate(scenes)}
    return evaluate(dets, gts, categories=range(1, cfg.num_classes + 1))


def default_weights(cfg: DetectorConfig) -> dict:
    return Detector(cfg).init_weights()


def _prepare(args):
    cfg, scenes, weights_fn = args
    with threadpool_limits(1):
        weights = weights_fn(cfg)
        return weights, evaluate_config(cfg, weights, scenes)


def sweep(
    configs,
    scenes,
    out_path,
    weights_fn: Callable[[DetectorConfig], dict] = default_weights,
    warmup: int = DEFAULT_WARMUP,
    n: int = DEFAULT_TIMED,
    jobs: int = 1,
) -> list[BenchmarkRecord]:
    """Evaluate, time and cost every config, appending one CSV row per config.

    Configs whose id is already in ``out_path`` are not rerun. Weight
    preparation and evaluation may use ``jobs`` worker processes; timing
    always runs in this process, one config at a time.
    """
    out_path = Path(out_path)
    records = read_records(out_path) if out_path.exists() else []
    done = {r.config_id for r in records}
    write_records(records, out_path)
    todo = []
    for cfg in configs:
        if cfg.config_id not in done:
            todo.append(cfg)
            done.add(cfg.config_id)
    scenes = list(scenes)
    images = [s.image for s in scenes]
    args = [(cfg, scenes, weights_fn) for cfg in todo]
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            prepared = pool.map(_prepare, args)
            records = _time_and_append(todo, prepared, images, records, out_path, warmup, n)
    else:
        records = _time_and_append(todo, map(_prepare, args), images, records, out_path, warmup, n)
    return records


def _time_and_append(todo, prepared, images, records, out_path, warmup, n):
    for cfg, (weights, result) in zip(todo, prepared):
        timing = time_model(cfg, weights, images, warmup, n)
        rec = BenchmarkRecord.build(cfg, result, timing, cost_model(cfg))
        records = records + [rec]
        write_records(records, out_path)
        log.info("%s map=%.4f time=%.2fms", rec.config_id, rec.map, rec.time_ms_mean)
    return records


def strip_timing(records) -> list[dict]:
    """Record dicts without the (nondeterministic) timing columns."""
    out = []
    for r in records:
        d = {k: getattr(r, k) for k in BenchmarkRecord.columns() if k not in TIMING_COLUMNS}
        out.append({k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()})
    return out
