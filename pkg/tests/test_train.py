import numpy as np
import pytest
from numpy.testing import assert_array_equal

from detbench.data import DatasetSpec, generate_dataset
from detbench.model import DetectorConfig, Detector
from detbench.train import HeadTrainer, TrainConfig, TrainingDiverged, train_head, write_trace


@pytest.fixture(scope="module")
def scenes():
    return generate_dataset(DatasetSpec(num_images=6, seed=7))


def test_config_validation_and_round_trip():
    t = TrainConfig(steps=10, learning_rate=0.1)
    assert TrainConfig.from_dict(t.to_dict()) == t
    with pytest.raises(ValueError):
        TrainConfig(steps=0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epochs": 3})


def test_zero_learning_rate_leaves_weights_and_flat_trace(scenes):
    cfg = DetectorConfig()
    # Batches larger than the anchor count make every step see the same anchors.
    t = TrainConfig(steps=5, learning_rate=0.0, images_per_step=1, ssd_batch=100000, ssd_positive_fraction=0.5)
    r = train_head(cfg, t, scenes[:1])
    init = Detector(cfg).init_weights()
    for k in init:
        assert_array_equal(r.weights[k], init[k])
    assert len(set(r.trace)) == 1


@pytest.mark.parametrize("axis", ["horizontal_flip", "vertical_flip"])
def test_flip_augmentation_changes_training_and_stays_deterministic(axis, scenes):
    base = dict(steps=6, learning_rate=0.01, images_per_step=2)
    plain = train_head(DetectorConfig(), TrainConfig(**base), scenes)
    a = train_head(DetectorConfig(), TrainConfig(**base, **{axis: True}), scenes)
    b = train_head(DetectorConfig(), TrainConfig(**base, **{axis: True}), scenes)
    assert a.trace == b.trace and a.trace != plain.trace


def test_single_image_overfit(scenes):
    r = train_head(DetectorConfig(), TrainConfig(steps=500, learning_rate=0.01, images_per_step=1), scenes[:1])
    assert r.trace[-1] < 0.1 * r.trace[0]


@pytest.mark.parametrize("arch", ["ssd", "faster_rcnn", "rfcn"])
def test_identical_seeds_identical_traces(arch, scenes):
    cfg = DetectorConfig(meta_arch=arch, num_proposals=30)
    t = TrainConfig(steps=6, learning_rate=0.01, images_per_step=2)
    a, b = train_head(cfg, t, scenes), train_head(cfg, t, scenes)
    assert a.trace == b.trace
    for k in a.weights:
        assert a.weights[k].tobytes() == b.weights[k].tobytes()
    c = train_head(cfg, TrainConfig(steps=6, learning_rate=0.01, images_per_step=2, seed=1), scenes)
    assert c.trace != a.trace


def test_only_predictors_change(scenes):
    cfg = DetectorConfig(meta_arch="faster_rcnn", head_depth=8, num_proposals=30)
    r = train_head(cfg, TrainConfig(steps=3, learning_rate=0.01), scenes)
    det = Detector(cfg)
    init = det.init_weights()
    trainable = {l.name for l in det.trainable_layers()}
    for k, v in init.items():
        changed = not np.array_equal(r.weights[k], v)
        assert changed == (k.rsplit("/", 1)[0] in trainable), k


def _loss(trainer, weights, scene, seed):
    return trainer.loss_and_grads(weights, 0, scene, np.random.default_rng(seed), need_grad=False)[0]


@pytest.mark.parametrize("arch,depth", [("ssd", 0), ("ssd", 6), ("faster_rcnn", 6), ("rfcn", 0), ("rfcn", 6)])
def test_gradients_match_finite_differences(arch, depth, scenes):
    cfg = DetectorConfig(meta_arch=arch, head_depth=depth, num_proposals=20)
    det = Detector(cfg)
    w = det.init_weights()
    trainer = HeadTrainer(cfg, TrainConfig(), w)
    scene = scenes[1]
    _, grads = trainer.loss_and_grads(w, 0, scene, np.random.default_rng(5))
    # Proposals are constants to the box stage, so RPN gradients are checked
    # against the RPN loss alone.
    rpn_only = HeadTrainer(cfg, TrainConfig(box_batch=0), w)
    dense = {l.name for l in det.dense_layers()} if det.box_layers else set()
    rng = np.random.default_rng(0)
    eps = 1e-6
    for layer in det.trainable_layers():
        fd = rpn_only if layer.name in dense else trainer
        for part in ("kernel", "bias"):
            key = f"{layer.name}/{part}"
            # Probe the largest-gradient entries plus a few random ones.
            flat = np.abs(grads[key]).ravel()
            probes = list(np.argsort(-flat)[:3]) + list(rng.integers(0, flat.size, 3))
            for p in probes:
                idx = np.unravel_index(p, w[key].shape)
                plus, minus = dict(w), dict(w)
                plus[key], minus[key] = w[key].copy(), w[key].copy()
                plus[key][idx] += eps
                minus[key][idx] -= eps
                num = (_loss(fd, plus, scene, 5) - _loss(fd, minus, scene, 5)) / (2 * eps)
                assert grads[key][idx] == pytest.approx(num, rel=1e-4, abs=1e-8), (key, idx)


@pytest.mark.parametrize("arch", ["ssd", "faster_rcnn", "rfcn"])
def test_small_step_does_not_increase_loss(arch, scenes):
    cfg = DetectorConfig(meta_arch=arch, num_proposals=20)
    w = Detector(cfg).init_weights()
    trainer = HeadTrainer(cfg, TrainConfig(), w)
    before, grads = trainer.loss_and_grads(w, 0, scenes[2], np.random.default_rng(1))
    stepped = {k: (v - 1e-4 * grads[k] if k in grads else v) for k, v in w.items()}
    assert _loss(trainer, stepped, scenes[2], 1) <= before + 1e-9


def test_divergence_guard(scenes):
    with pytest.raises(TrainingDiverged) as info:
        train_head(DetectorConfig(), TrainConfig(steps=50, learning_rate=50.0, images_per_step=1), scenes)
    assert len(info.value.trace) >= 2


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train_head(DetectorConfig(), TrainConfig(steps=1), [])


def test_trace_csv(tmp_path, scenes):
    r = train_head(DetectorConfig(), TrainConfig(steps=3), scenes, trace_path=tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "step,loss" and len(lines) == 4
    assert [float(l.split(",")[1]) for l in lines[1:]] == r.trace
    write_trace([0.5], tmp_path / "u.csv")
    assert (tmp_path / "u.csv").read_text() == "step,loss\n0,0.5\n"
