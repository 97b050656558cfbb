import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from detbench.losses import (
    LocationLoss,
    LossConfig,
    anchor_loss,
    classification_loss,
    loss_and_gradient,
    smooth_l1,
    softmax,
    total_loss,
)
from detbench.matching import IGNORED, NEGATIVE, MatchResult


def test_smooth_l1_values():
    assert_allclose(smooth_l1([0.0, 0.5, -0.5, 1.0, 2.0, -3.0]), [0, 0.125, 0.125, 0.5, 1.5, 2.5])


@given(st.floats(-50, 50))
def test_smooth_l1_continuous_convex_bounds(x):
    v = float(smooth_l1(x))
    assert 0 <= v <= 0.5 * x * x + 1e-12
    assert v >= abs(x) - 0.5 - 1e-12


def test_uniform_logits_cost_log_classes():
    assert classification_loss(np.zeros(4), 2) == pytest.approx(np.log(4))


def test_anchor_loss_cases():
    cfg = LossConfig(alpha=2.0, beta=1.0, num_classes=3)
    z = np.zeros(4)
    assert anchor_loss(IGNORED, 0, z, z, None, cfg) == 0.0
    assert anchor_loss(NEGATIVE, 0, z, z, None, cfg) == pytest.approx(np.log(4))
    # Residual [0.5, 0, 0, 2]: smooth L1 sum 0.125 + 1.5.
    got = anchor_loss(0, 1, z, z, np.array([0.5, 0, 0, 2.0]), cfg)
    assert got == pytest.approx(np.log(4) + 2 * 1.625)
    with pytest.raises(ValueError):
        anchor_loss(0, 1, z, z, None, cfg)


def test_l2_option():
    cfg = LossConfig(alpha=1.0, beta=0.0, location_loss="l2")
    assert cfg.location_loss is LocationLoss.L2
    assert anchor_loss(0, 1, np.zeros(4), np.zeros(4), np.full(4, 2.0), cfg) == pytest.approx(8.0)


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(alpha=-1)
    with pytest.raises(ValueError):
        LossConfig(alpha=0, beta=0)


def _problem(seed, n=12, k=3):
    rng = np.random.default_rng(seed)
    mg = rng.choice([0, 1, NEGATIVE, IGNORED], size=n)
    labels = np.where(mg >= 0, mg + 1, 0)
    m = MatchResult(mg, labels)
    loc = rng.normal(size=(n, 4)) * 2
    logits = rng.normal(size=(n, k + 1))
    targets = np.where((mg >= 0)[:, None], rng.normal(size=(n, 4)) * 2, np.nan)
    sampled = rng.choice(n, size=8, replace=True)
    return m, loc, logits, targets, sampled


@pytest.mark.parametrize("kind", list(LocationLoss))
def test_total_is_mean_of_anchor_losses(kind):
    cfg = LossConfig(alpha=1.5, beta=0.7, location_loss=kind)
    m, loc, logits, targets, sampled = _problem(3)
    want = np.mean(
        [
            anchor_loss(m.matched_gt[i], m.labels[i], loc[i], logits[i], targets[i] if m.matched_gt[i] >= 0 else None, cfg)
            for i in sampled
        ]
    )
    assert total_loss(m, loc, logits, targets, sampled, cfg) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("kind", list(LocationLoss))
def test_gradient_matches_central_differences(seed, kind):
    cfg = LossConfig(alpha=1.3, beta=0.8, location_loss=kind)
    m, loc, logits, targets, sampled = _problem(seed)
    _, g_loc, g_cls = loss_and_gradient(m, loc, logits, targets, sampled, cfg)
    eps = 1e-6
    for arr, grad, which in ((loc, g_loc, 0), (logits, g_cls, 1)):
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus, minus = arr.copy(), arr.copy()
            plus[idx] += eps
            minus[idx] -= eps
            args_p = (plus, logits) if which == 0 else (loc, plus)
            args_m = (minus, logits) if which == 0 else (loc, minus)
            num[idx] = (total_loss(m, *args_p, targets, sampled, cfg) - total_loss(m, *args_m, targets, sampled, cfg)) / (2 * eps)
        assert_allclose(grad, num, atol=1e-6)


def test_empty_sample_rejected():
    m, loc, logits, targets, _ = _problem(0)
    with pytest.raises(ValueError):
        total_loss(m, loc, logits, targets, [], LossConfig())


def test_missing_target_for_positive_rejected():
    m = MatchResult(np.array([0]), np.array([1]))
    with pytest.raises(ValueError):
        total_loss(m, np.zeros((1, 4)), np.zeros((1, 4)), np.full((1, 4), np.nan), [0], LossConfig())


def test_softmax_stable_for_large_logits():
    p = softmax(np.array([1000.0, 0.0, -1000.0]))
    assert_allclose(p, [1, 0, 0])
