import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_cloud
from oracles import central_fd
from splatgeom.errors import BadSchedule, MissingTarget
from splatgeom.semantics import target_shape
from splatgeom.shape_training import (LossWeights, PenaltyConfig, TrainState, fit_shapes,
                                      gc_loss, prune, prune_schedule, total_loss)
from splatgeom.splat_model import SplatCloud, aspect_ratios_many


def random_problem(rng, n=20, n_labels=3):
    x = rng.normal(scale=1.0, size=(n, 3))
    labels = rng.integers(0, n_labels + 1, n)
    targets = {k: target_shape(rng.uniform(0.01, 1.0)) for k in range(1, n_labels + 1)}
    return x, labels, targets


@pytest.mark.parametrize("kind", ["huber", "smooth-abs", "logistic"])
def test_penalty_derivative_matches_fd(kind):
    pen = PenaltyConfig(kind, 0.7)
    t = np.linspace(-3, 3, 61) + 0.013
    fd = (pen.value(t + 1e-6) - pen.value(t - 1e-6)) / 2e-6
    np.testing.assert_allclose(pen.derivative(t), fd, atol=1e-7)


@pytest.mark.parametrize("kind", ["huber", "smooth-abs"])
def test_penalty_shape(kind):
    pen = PenaltyConfig(kind, 1.0)
    t = np.linspace(-5, 5, 101)
    assert pen.value(0.0) == 0
    np.testing.assert_allclose(pen.value(t), pen.value(-t))
    assert (np.diff(pen.value(t), 2) >= -1e-12).all()


def test_zero_loss_at_target():
    x = np.log([[10.0, 10.0, 1.0]])
    loss, grad = gc_loss(x, np.array([1]), {1: (10.0, 10.0)})
    assert loss == pytest.approx(0, abs=1e-24)
    np.testing.assert_allclose(grad, 0, atol=1e-12)
    loss, grad = gc_loss(x, np.array([1]), {1: (10.0, 10.0)}, residual="linear")
    assert loss == pytest.approx(0, abs=1e-24)


def test_unlabeled_contribute_nothing(rng):
    x = rng.normal(size=(5, 3))
    loss, grad = gc_loss(x, np.zeros(5, int), {})
    assert loss == 0 and not grad.any()


def test_missing_target():
    with pytest.raises(MissingTarget):
        gc_loss(np.zeros((1, 3)), np.array([4]), {1: (2.0, 1.0)})


@pytest.mark.parametrize("residual", ["log", "linear"])
@pytest.mark.parametrize("kind", ["huber", "smooth-abs"])
def test_gradient_matches_central_differences(rng, residual, kind):
    pen = PenaltyConfig(kind, 1.0)
    x, labels, targets = random_problem(rng)
    _, grad = gc_loss(x, labels, targets, pen, residual=residual)
    fd = central_fd(lambda v: gc_loss(v, labels, targets, pen, residual=residual)[0], x, 1e-5)
    np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_loss_nonnegative_and_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    x, labels, targets = random_problem(rng, 10)
    loss, _ = gc_loss(x, labels, targets)
    assert loss >= 0
    # rotating a splat only permutes which axis holds which scale
    perm = np.array([rng.permutation(3) for _ in range(len(x))])
    loss_p, _ = gc_loss(np.take_along_axis(x, perm, axis=1), labels, targets)
    assert math.isclose(loss, loss_p, rel_tol=1e-12, abs_tol=1e-15)


def test_live_mask_excludes_dead(rng):
    x, labels, targets = random_problem(rng)
    labels[:] = 1
    live = np.zeros(len(x), bool)
    live[:3] = True
    full, _ = gc_loss(x[:3], labels[:3], targets)
    masked, grad = gc_loss(x, labels, targets, live_mask=live)
    assert masked == pytest.approx(full)
    assert not grad[3:].any()


def test_total_loss():
    assert total_loss(1, 1, 1, LossWeights()) == pytest.approx(1.0)
    assert total_loss(3, 5, 7, LossWeights(0, 0, 1)) == 7
    w = LossWeights()
    assert total_loss(2, 0, 0, w) + total_loss(0, 3, 0, w) == pytest.approx(total_loss(2, 3, 0, w))


@given(st.floats(0, 100), st.floats(0, 100), st.floats(0, 100))
def test_total_loss_convex_combination(a, b, c):
    v = total_loss(a, b, c, LossWeights(0.2, 0.2, 0.6))
    assert min(a, b, c) - 1e-9 <= v <= max(a, b, c) + 1e-9


# -- pruning -----------------------------------------------------------------------

def test_schedule_examples():
    st_ = TrainState(iteration=0, warmup_iters=6000, target_total=500, end_iter=30000)
    assert prune_schedule(st_, 1000) == 1000
    st_.iteration = 18000
    assert prune_schedule(st_, 1000) == 750
    for it in (30000, 45000):
        st_.iteration = it
        assert prune_schedule(st_, 1000) == 500
    with pytest.raises(BadSchedule):
        prune_schedule(TrainState(target_total=2000), 1000)


def test_schedule_monotone_and_linear():
    s = TrainState(warmup_iters=100, target_total=37, end_iter=1100)
    vals = []
    for it in range(0, 1300):
        s.iteration = it
        vals.append(prune_schedule(s, 1037))
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    # rational points where the linear value is an integer
    for k in range(11):
        assert vals[100 + 100 * k] == 1037 - 100 * k


def test_prune_examples():
    live = prune([0.9, 0.1, 0.5], np.ones(3, bool), 2)
    assert live.tolist() == [True, False, True]
    assert prune([0.9, 0.1, 0.5], np.ones(3, bool), 3).all()
    # ties broken by index
    assert prune([0.5, 0.5, 0.5], np.ones(3, bool), 1).tolist() == [False, False, True]


def test_prune_matches_sort_and_is_idempotent(rng):
    op = rng.random(1000)
    live = prune(op, np.ones(1000, bool), 400)
    expected = np.zeros(1000, bool)
    expected[np.argsort(op)[600:]] = True
    np.testing.assert_array_equal(live, expected)
    np.testing.assert_array_equal(prune(op, live, 400), live)


# -- fitting -------------------------------------------------------------------------

def _cloud(log_scales):
    n = len(log_scales)
    return SplatCloud(np.zeros((n, 3)), log_scales, np.tile([1.0, 0, 0, 0], (n, 1)),
                      np.zeros(n), np.zeros((n, 3)))


def test_single_splat_converges():
    res = fit_shapes(_cloud(np.zeros((1, 3))), np.array([1]), {1: (10.0, 3.0)})
    a1, a2 = aspect_ratios_many(np.exp(res.log_scales))
    assert a1[0] == pytest.approx(10, rel=0.05) and a2[0] == pytest.approx(3, rel=0.05)
    losses = [t[1] for t in res.trace]
    assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))


def test_already_optimal_has_no_drift():
    cloud = _cloud(np.zeros((3, 3)))
    res = fit_shapes(cloud, np.array([1, 1, 1]), {1: (1.0, 1.0)}, iters=50)
    assert res.trace[0][1] == 0
    np.testing.assert_array_equal(res.log_scales, 0)


def test_two_groups_reach_their_own_targets(rng):
    cloud = random_cloud(rng, 60, False)
    labels = np.repeat([1, 2], 30)
    targets = {1: (8.0, 2.0), 2: (20.0, 15.0)}
    res = fit_shapes(cloud, labels, targets)
    a1, a2 = aspect_ratios_many(np.exp(res.log_scales))
    for lab, (t1, t2) in targets.items():
        sel = labels == lab
        np.testing.assert_allclose(a1[sel], t1, rtol=0.05)
        np.testing.assert_allclose(a2[sel], t2, rtol=0.05)


def test_fit_zero_iters_is_identity(rng):
    cloud = random_cloud(rng, 10, True)
    res = fit_shapes(cloud, np.ones(10, int), {1: (3.0, 2.0)}, iters=0)
    assert res.cloud == cloud


def test_fit_with_schedule_prunes_low_opacity_first(rng):
    cloud = random_cloud(rng, 100, False)
    sched = TrainState(warmup_iters=10, target_total=40, end_iter=50)
    res = fit_shapes(cloud, np.ones(100, int), {1: (4.0, 2.0)}, iters=50, schedule=sched)
    assert res.live_mask.sum() == 40
    lives = [t[2] for t in res.trace]
    assert lives[0] == 100 and lives[10] == 100 and lives[-1] == 40
    assert all(b <= a for a, b in zip(lives, lives[1:]))
    kept = cloud.opacity_logits[res.live_mask]
    assert kept.min() >= cloud.opacity_logits[~res.live_mask].max()
