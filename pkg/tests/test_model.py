import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from detbench.model import DetectorConfig, Detector, MetaArch, cost_model, run_detector
from detbench.model import crops
from detbench.model.extractors import FEATURE_CHANNELS, build_extractor
from detbench.model.layers import Kind, LayerSpec, layer_flops, output_shape

ARCHES = list(MetaArch)


@pytest.fixture(scope="module")
def image():
    return np.random.default_rng(3).uniform(size=(64, 64, 3))


def test_config_round_trip_and_validation():
    cfg = DetectorConfig(meta_arch="rfcn", num_proposals=50, anchor_ratios=[1, 2])
    assert cfg.meta_arch is MetaArch.RFCN and cfg.anchor_ratios == (1.0, 2.0)
    assert DetectorConfig.from_dict(cfg.to_dict()) == cfg
    for bad in ({"stride": 4}, {"resolution": 72}, {"num_proposals": 301}, {"extractor": "resnet"},
                {"crop_size": 3}, {"head_depth": -1}):
        with pytest.raises(ValueError):
            DetectorConfig(**bad)
    with pytest.raises(ValueError):
        DetectorConfig.from_dict({"depth": 3})


def test_config_id_stable_and_ignores_proposals_for_ssd():
    a = DetectorConfig()
    assert a.config_id == DetectorConfig().config_id
    assert a.config_id.startswith("ssd-dense_tiny-M64-s16-")
    assert a.replace(num_proposals=10).config_id == a.config_id
    f = DetectorConfig(meta_arch="faster_rcnn")
    assert f.replace(num_proposals=10).config_id != f.config_id
    assert "-n300-" in f.config_id


@pytest.mark.parametrize("name", ["dense_tiny", "separable_tiny"])
@pytest.mark.parametrize("stride", [8, 16])
def test_extractor_strides(name, stride):
    ex = build_extractor(name, stride)
    shape = (64, 64, 3)
    for i, layer in enumerate(ex.layers):
        shape = output_shape(layer, shape)
        if i == ex.lower_tap:
            assert shape[:2] == (8, 8)
    assert shape == (64 // stride, 64 // stride, FEATURE_CHANNELS)
    assert not any(l.trainable for l in ex.layers)


def test_init_weights_deterministic_and_complete():
    det = Detector(DetectorConfig(meta_arch="faster_rcnn"))
    a, b = det.init_weights(), det.init_weights()
    assert a.keys() == b.keys()
    for k in a:
        assert_array_equal(a[k], b[k])
    c = det.init_weights(seed=1)
    assert not np.array_equal(a["extractor/conv1/kernel"], c["extractor/conv1/kernel"])
    names = {l.name for l in det.layers() if l.has_weights}
    assert {k.rsplit("/", 1)[0] for k in a} == names


@pytest.mark.parametrize("arch", ARCHES)
def test_trainable_layers_are_predictors(arch):
    det = Detector(DetectorConfig(meta_arch=arch, head_depth=8))
    kinds = {l.kind for l in det.trainable_layers()}
    assert kinds == {Kind.PREDICTOR}
    assert any(l.name.endswith("/hidden") for l in det.trainable_layers())


@pytest.mark.parametrize("arch", ARCHES)
@pytest.mark.parametrize("head_depth", [0, 8])
def test_forward_shapes(arch, head_depth, image):
    cfg = DetectorConfig(meta_arch=arch, num_proposals=20, head_depth=head_depth)
    det = Detector(cfg)
    w = det.init_weights()
    raw, cost = run_detector(cfg, image, w)
    assert raw.scores.shape == (len(raw), 4)
    assert_allclose(raw.scores.sum(axis=1), 1.0)
    assert np.isfinite(raw.boxes).all()
    if arch is MetaArch.SSD:
        maps = det.ssd_maps(image, w)
        assert [m.shape[:2] for m in maps] == [(8, 8), (4, 4), (2, 2), (1, 1)]
        assert len(raw) == 6 * (64 + 16 + 4 + 1)
        assert raw.proposals is None
    else:
        assert len(raw) == len(raw.proposals) <= 20
        assert cost.num_proposals == len(raw.proposals)
    d = det.detect(image, w)
    assert len(d) <= 100
    assert d.boxes.min() >= 0 and d.boxes.max() <= 64
    assert d.scores.min() >= 0.01


def test_ssd_anchor_bases_follow_strides(image):
    det = Detector(DetectorConfig())
    grids = det.ssd_grids(((8, 8), (4, 4), (2, 2), (1, 1)))
    assert [g.base for g in grids] == [8.0, 16.0, 32.0, 64.0]
    assert [g.stride for g in grids] == [8.0, 16.0, 32.0, 64.0]
    rpn = Detector(DetectorConfig(meta_arch="faster_rcnn")).rpn_grid((4, 4))
    assert rpn.base == 32.0 and len(rpn) == 16 * 9


def test_stride8_ssd_uses_top_map_only(image):
    det = Detector(DetectorConfig(stride=8))
    maps = det.ssd_maps(image, det.init_weights())
    assert [m.shape[:2] for m in maps] == [(8, 8), (4, 4), (2, 2)]


def test_rfcn_bin_average_head_equals_ps_pool():
    cfg = DetectorConfig(meta_arch="rfcn")
    det = Detector(cfg)
    rng = np.random.default_rng(0)
    w = det.init_weights()
    layer = det.box_layers[-1]
    w[f"{layer.name}/bias"] = rng.normal(size=layer.out_channels)
    top = rng.normal(size=(4, 4, 32))
    props = np.array([[3.0, 5.0, 40.0, 60.0], [0, 0, 64, 64], [20, 20, 30, 28]])
    loc, logits = det.box_head(det.box_inputs(top, props, w), w)
    maps = det.rfcn_score_maps(top, w)
    nb = det.to_feature_coords(props, top.shape)
    kk, k1 = 9, 4
    assert_allclose(logits, crops.position_sensitive_pool(maps[..., : kk * k1], nb, 3, 2), atol=1e-12)
    assert_allclose(loc, crops.position_sensitive_pool(maps[..., kk * k1 :], nb, 3, 2), atol=1e-12)


def test_feature_coords_map_centers_to_unit_interval():
    det = Detector(DetectorConfig(meta_arch="rfcn"))
    # With a 4x4 map at stride 16, cell centers sit at 8 and 56 px.
    assert_allclose(det.to_feature_coords([[8, 8, 56, 56]], (4, 4)), [[0, 0, 1, 1]])


def test_encode_decode_under_detector_scheme():
    det = Detector(DetectorConfig(box_scheme="center_sqrt"))
    anchors = np.array([[0.0, 0, 16, 16]])
    boxes = np.array([[4.0, 6, 20, 30]])
    assert_allclose(det.decode(det.encode(boxes, anchors), anchors), boxes)


# ------------------------------------------------------------------- FLOPs


@given(st.integers(1, 64), st.integers(1, 64), st.sampled_from([1, 3, 5]), st.integers(2, 20))
def test_separable_ratio_law(cin, cout, k, hw):
    dense = LayerSpec("d", Kind.CONV, (k, k), cin, cout)
    dw = LayerSpec("dw", Kind.DEPTHWISE, (k, k), cin, cin)
    pw = LayerSpec("pw", Kind.POINTWISE, (1, 1), cin, cout)
    shape = (hw, hw, cin)
    sep = layer_flops(dw, shape) + layer_flops(pw, shape)
    # Exact rational comparison.
    assert sep * cout * k * k == layer_flops(dense, shape) * (k * k + cout)


@pytest.mark.parametrize("extractor", ["dense_tiny", "separable_tiny"])
def test_doubling_resolution_quadruples_ssd_flops(extractor):
    small = cost_model(DetectorConfig(extractor=extractor, resolution=64)).total_flops
    large = cost_model(DetectorConfig(extractor=extractor, resolution=128)).total_flops
    assert large / small == pytest.approx(4.0, rel=0.05)


def test_faster_rcnn_flops_affine_in_proposals():
    cfg = DetectorConfig(meta_arch="faster_rcnn")
    ns = np.array([10, 50, 100, 300])
    flops = np.array([cost_model(cfg, int(n)).total_flops for n in ns], dtype=float)
    fit = np.polyval(np.polyfit(ns, flops, 1), ns)
    assert np.max(np.abs(fit - flops) / flops) < 1e-9
    rep = cost_model(cfg)
    assert rep.total_flops == rep.fixed_flops + 300 * rep.per_proposal_flops


def test_rfcn_per_proposal_cost_is_small():
    f = cost_model(DetectorConfig(meta_arch="faster_rcnn")).per_proposal_flops
    r = cost_model(DetectorConfig(meta_arch="rfcn")).per_proposal_flops
    assert 0 < r < 0.1 * f


def test_cost_counts_match_layer_specs():
    det = Detector(DetectorConfig(head_depth=16))
    rep = det.cost()
    assert rep.params == sum(l.param_count() for l in det.layers())
    names = [l.name for l in rep.layers]
    assert names == [l.name for l in det.extractor.layers + det.extras] + [
        n for pair in zip(det.hidden, det.heads) for n in (pair[0].name, pair[1].name)
    ]
    assert rep.memory_bytes > rep.params * 8
    mem = cost_model(DetectorConfig(meta_arch="faster_rcnn"))
    assert mem.with_proposals(100).memory_bytes < mem.memory_bytes
