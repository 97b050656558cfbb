import json
from pathlib import Path

import pytest

from detbench.data import DataError, DatasetSpec
from detbench.model import DetectorConfig
from detbench.runconfig import DEFAULT_TEST_SEED, RunConfig, load_run_config, parse_run_config


def test_defaults():
    rc = parse_run_config({"schema_version": 1})
    assert rc.detector == DetectorConfig()
    assert rc.test_dataset.seed == DEFAULT_TEST_SEED and rc.dataset.seed == 0
    assert rc.sweep_configs() == [rc.detector]


def test_sections_parsed(tmp_path):
    doc = {
        "schema_version": 1,
        "detector": {"meta_arch": "rfcn", "num_proposals": 50},
        "train": {"steps": 3},
        "dataset": {"num_images": 4},
        "test_dataset": {"num_images": 2},
        "bench": {"warmup": 0, "n": 2},
        "sweep": [{"num_proposals": 10}, {"meta_arch": "ssd"}],
    }
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    rc = load_run_config(path)
    assert rc.train.steps == 3 and (rc.warmup, rc.timed) == (0, 2)
    assert rc.test_dataset == DatasetSpec(num_images=2, seed=DEFAULT_TEST_SEED)
    cfgs = rc.sweep_configs()
    assert [c.num_proposals for c in cfgs] == [10, 50]
    assert [c.meta_arch.value for c in cfgs] == ["rfcn", "ssd"]


@pytest.mark.parametrize(
    "doc",
    [
        [],
        {},
        {"schema_version": 2},
        {"schema_version": 1, "extra": {}},
        {"schema_version": 1, "detector": {"bogus": 1}},
        {"schema_version": 1, "train": {"steps": 0}},
        {"schema_version": 1, "bench": {"reps": 3}},
        {"schema_version": 1, "sweep": [{"nope": 1}]},
        {"schema_version": 1, "detector": {"resolution": -5}},
    ],
)
def test_invalid_documents(doc):
    with pytest.raises(DataError):
        parse_run_config(doc)


def test_invalid_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{nope")
    with pytest.raises(DataError):
        load_run_config(path)


def test_runconfig_instances_do_not_share_state():
    a, b = RunConfig(), RunConfig()
    a.sweep.append({"stride": 16})
    assert b.sweep == []


@pytest.mark.parametrize("name", ["ssd_desk.json", "frcnn_desk.json"])
def test_shipped_recipes_parse(name):
    rc = load_run_config(Path(__file__).resolve().parents[1] / "configs" / name)
    assert rc.train.horizontal_flip and rc.detector.resolution == 64
