"""Versioned JSON run configuration shared by the CLI subcommands.

Layout (every section optional, unknown keys rejected)::

    {
      "schema_version": 1,
      "detector": {...DetectorConfig fields...},
      "train": {...TrainConfig fields...},
      "dataset": {...DatasetSpec fields, training scenes...},
      "test_dataset": {...DatasetSpec fields, evaluation scenes...},
      "bench": {"warmup": 5, "n": 50},
      "sweep": [{...DetectorConfig overrides...}, ...]
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .bench import DEFAULT_TIMED, DEFAULT_WARMUP
from .data import DataError, DatasetSpec
from .model.config import DetectorConfig
from .train import TrainConfig

SCHEMA_VERSION = 1
SECTIONS = ("schema_version", "detector", "train", "dataset", "test_dataset", "bench", "sweep")
DEFAULT_TEST_SEED = 1000


@dataclass
class RunConfig:
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    test_dataset: DatasetSpec = field(default_factory=lambda: DatasetSpec(seed=DEFAULT_TEST_SEED))
    warmup: int = DEFAULT_WARMUP
    timed: int = DEFAULT_TIMED
    sweep: list[dict] = field(default_factory=list)

    def sweep_configs(self) -> list[DetectorConfig]:
        if not self.sweep:
            return [self.detector]
        base = self.detector.to_dict()
        out = []
        for override in self.sweep:
            unknown = set(override) - set(base)
            if unknown:
                raise DataError(f"unknown sweep keys: {sorted(unknown)}")
            out.append(DetectorConfig.from_dict({**base, **override}))
        return out


def parse_run_config(doc: dict) -> RunConfig:
    """Validate a decoded config document.

    Raises:
        DataError: on a wrong schema version, unknown keys or invalid values.
    """
    if not isinstance(doc, dict):
        raise DataError("config must be a JSON object")
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise DataError(f"unknown config sections: {sorted(unknown)}")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"schema_version must be {SCHEMA_VERSION}")
    try:
        rc = RunConfig()
        if "detector" in doc:
            rc.detector = DetectorConfig.from_dict(doc["detector"])
        if "train" in doc:
            rc.train = TrainConfig.from_dict(doc["train"])
        if "dataset" in doc:
            rc.dataset = DatasetSpec.from_dict(doc["dataset"])
        if "test_dataset" in doc:
            rc.test_dataset = DatasetSpec.from_dict({"seed": DEFAULT_TEST_SEED, **doc["test_dataset"]})
        bench = dict(doc.get("bench", {}))
        extra = set(bench) - {"warmup", "n"}
        if extra:
            raise DataError(f"unknown bench keys: {sorted(extra)}")
        rc.warmup = int(bench.get("warmup", DEFAULT_WARMUP))
        rc.timed = int(bench.get("n", DEFAULT_TIMED))
        rc.sweep = list(doc.get("sweep", []))
        rc.sweep_configs()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"invalid config: {exc}") from exc
    return rc


def load_run_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    return parse_run_config(doc)
