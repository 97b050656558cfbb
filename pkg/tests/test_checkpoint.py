import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from detbench.checkpoint import load_weights, manifest_path, save_weights
from detbench.model import DetectorConfig, Detector


def test_round_trip_is_exact(tmp_path):
    w = Detector(DetectorConfig(meta_arch="rfcn")).init_weights()
    save_weights(w, tmp_path / "ck.bin", {"note": "x"})
    back, meta = load_weights(tmp_path / "ck.bin")
    assert meta == {"note": "x"}
    assert back.keys() == w.keys()
    for k in w:
        assert_array_equal(back[k], w[k])
        assert back[k].dtype == np.float64


def test_manifest_layout_and_bytes_deterministic(tmp_path):
    w = {"b": np.arange(3.0), "a": np.ones((2, 2))}
    save_weights(w, tmp_path / "x.bin")
    doc = json.loads(manifest_path(tmp_path / "x.bin").read_text())
    assert [t["name"] for t in doc["tensors"]] == ["a", "b"]
    assert [t["offset"] for t in doc["tensors"]] == [0, 32]
    assert doc["byte_order"] == "little"
    first = (tmp_path / "x.bin").read_bytes()
    save_weights(w, tmp_path / "x.bin")
    assert (tmp_path / "x.bin").read_bytes() == first and len(first) == 56


def test_truncated_file_rejected(tmp_path):
    save_weights({"a": np.ones(8)}, tmp_path / "x.bin")
    (tmp_path / "x.bin").write_bytes((tmp_path / "x.bin").read_bytes()[:16])
    with pytest.raises(ValueError):
        load_weights(tmp_path / "x.bin")
