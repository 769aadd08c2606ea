import math

import numpy as np
import pytest

from feelsim.channel import DeviceProfile
from feelsim.compression import SparseUpdate, solve_preservation_probs, sparsify
from feelsim.errors import ConfigError, DimensionMismatchError, InfeasiblePlanError
from feelsim.federated import TrainingState, aggregate, apply_update, estimate_gradient_stats
from feelsim.optimizer import TransmissionPlan
from feelsim.tasks import TaskSpec, finalize_task, local_gradient, make_task


def profiles(sizes):
    return [DeviceProfile(i, s, 1.0, 1.0, 1e9, 0.0, 32) for i, s in enumerate(sizes)]


def plan(q, r=None):
    q = np.asarray(q, dtype=float)
    return TransmissionPlan(1, 1.0, np.ones_like(q) if r is None else np.asarray(r), q, 0.0)


def dense(g):
    g = np.asarray(g, dtype=float)
    idx = np.flatnonzero(g)
    return SparseUpdate(idx, g[idx], g.size, 32 * idx.size)


def toy_task():
    return finalize_task("quadratic", np.eye(4) * 2.0, np.ones(4))


def test_initial_state_validation():
    task = toy_task()  # mu = ell = 1
    s = TrainingState.initial(task, np.zeros(4), chi=10, nu=100, G=1.0, alpha=[0.5])
    assert s.lr == pytest.approx(10 / 101)
    with pytest.raises(ConfigError, match="raise chi"):
        TrainingState.initial(task, np.zeros(4), chi=0.5, nu=100, G=1.0, alpha=[0.5])
    with pytest.raises(ConfigError, match="raise nu"):
        TrainingState.initial(task, np.zeros(4), chi=10, nu=5, G=1.0, alpha=[0.5])


def test_aggregate_full_delivery_is_weighted_average():
    g = [np.array([1.0, 0.0, 2.0]), np.array([3.0, -1.0, 0.0])]
    agg = aggregate([(0, dense(g[0])), (1, dense(g[1]))], plan([1, 1]), profiles([1, 3]))
    np.testing.assert_allclose(agg, 0.25 * g[0] + 0.75 * g[1])


def test_inverse_probability_scaling():
    agg = aggregate([(0, dense([1.0, 2.0]))], plan([0.5]), profiles([7]))
    np.testing.assert_allclose(agg, [2.0, 4.0])


def test_absent_devices_contribute_nothing():
    agg = aggregate([(1, dense([1.0, 1.0]))], plan([0.5, 1.0]), profiles([1, 1]))
    np.testing.assert_allclose(agg, [0.5, 0.5])
    np.testing.assert_array_equal(aggregate([], plan([1.0]), profiles([1]), dim=3), np.zeros(3))


def test_aggregate_errors():
    with pytest.raises(InfeasiblePlanError):
        aggregate([(0, dense([1.0]))], plan([0.0]), profiles([1]))
    # a device that sat the round out may carry q = 0
    np.testing.assert_array_equal(aggregate([(1, dense([2.0]))], plan([0.0, 0.5]), profiles([1, 1])), [2.0])
    with pytest.raises(DimensionMismatchError):
        aggregate([(0, dense([1.0, 1.0])), (1, dense([1.0]))], plan([1, 1]), profiles([1, 1]))
    with pytest.raises(DimensionMismatchError):
        aggregate([], plan([1.0]), profiles([1]))


def test_aggregation_is_unbiased():
    rng = np.random.default_rng(0)
    sizes = [30, 50, 20]
    grads = [rng.standard_normal(20) for _ in sizes]
    q = np.array([0.9, 0.4, 0.7])
    r = np.array([0.2, 0.5, 0.1])
    p = plan(q, r)
    plans = [solve_preservation_probs(g, ri) for g, ri in zip(grads, r)]
    target = sum(s / 100 * g for s, g in zip(sizes, grads))
    rounds = np.array([
        aggregate([(m, sparsify(grads[m], plans[m], rng)) for m in range(3) if rng.random() < q[m]],
                  p, profiles(sizes), dim=20)
        for _ in range(10_000)
    ])
    z = np.abs(rounds.mean(0) - target) / (rounds.std(0) / math.sqrt(len(rounds)))
    assert np.mean(z > 3) <= 0.05 and z.max() < 4.5


def test_apply_update_step_and_estimators():
    task = toy_task()
    s = TrainingState.initial(task, np.ones(4), chi=10, nu=100, G=1.0, alpha=[0.1, 0.1])
    same = apply_update(s, np.zeros(4))
    np.testing.assert_array_equal(same.model, s.model)
    assert same.round == 2
    grads = [np.array([3.0, 0.0, 0.0, 0.0]), np.array([1.0, 1.0, 1.0, 1.0])]
    nxt = apply_update(s, np.ones(4), grads, elapsed=0.5)
    np.testing.assert_allclose(nxt.model, 1 - 10 / 101)
    assert nxt.G_est == 9.0
    np.testing.assert_allclose(nxt.alpha_est, [0.25, 1.0])
    assert nxt.cumulative_time == 0.5
    later = apply_update(nxt, np.zeros(4), [np.zeros(4), np.array([1.0, 0, 0, 0])])
    assert later.G_est == 9.0
    np.testing.assert_allclose(later.alpha_est, [0.25, 1.0])
    with pytest.raises(DimensionMismatchError):
        apply_update(s, np.zeros(3))


def test_deterministic_limit_decreases_loss():
    spec = TaskSpec(kind="quadratic", dim=10, samples_per_device=50)
    task, part = make_task(spec, 3, np.random.default_rng(1))
    nu = 2 * task.smoothness * 10
    s = TrainingState.initial(task, np.zeros(10), chi=10, nu=nu, G=1.0, alpha=np.full(3, 0.5))
    w_sizes = np.array(part.sizes) / sum(part.sizes)
    prev = task.loss(s.model)
    for _ in range(200):
        g = sum(w * local_gradient(task, part, m, s.model, None) for m, w in enumerate(w_sizes))
        s = apply_update(s, g)
        cur = task.loss(s.model)
        assert cur <= prev + 1e-12
        prev = cur


def test_sgd_gap_decays_like_one_over_t():
    spec = TaskSpec(kind="quadratic", dim=20, samples_per_device=200, partition="iid")
    task, part = make_task(spec, 5, np.random.default_rng(0))
    T, reps = 500, 20
    gaps = np.zeros(T)
    for rep in range(reps):
        rng = np.random.default_rng(rep)
        s = TrainingState.initial(task, np.zeros(20), chi=10, nu=100, G=1.0, alpha=np.full(5, 0.5))
        for t in range(T):
            g = sum(local_gradient(task, part, m, s.model, 8, rng) for m in range(5)) / 5
            s = apply_update(s, g)
            gaps[t] += task.loss_gap(s.model) / reps
    ts = np.arange(1, T + 1)
    sel = ts >= 100
    slope = np.polyfit(np.log(ts[sel]), np.log(gaps[sel]), 1)[0]
    assert -1.2 <= slope <= -0.8


def test_gradient_stats():
    spec = TaskSpec(kind="quadratic", dim=6, samples_per_device=40)
    task, part = make_task(spec, 3, np.random.default_rng(2))
    w = np.zeros(6)
    stats = estimate_gradient_stats(task, part, w, 40, lambda m: np.random.default_rng(m), resamples=5)
    assert stats.sgd_variance == pytest.approx(0.0, abs=1e-20)
    full = max(float(local_gradient(task, part, m, w, None) @ local_gradient(task, part, m, w, None))
               for m in range(3))
    assert stats.grad_bound == pytest.approx(full)
    noisy = estimate_gradient_stats(task, part, w, 4, lambda m: np.random.default_rng(m), resamples=50)
    assert noisy.sgd_variance > 0 and noisy.grad_bound > full
    assert np.all((noisy.alpha > 0) & (noisy.alpha <= 1))
