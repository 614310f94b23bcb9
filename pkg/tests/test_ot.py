"""Entropic OT: marginal feasibility, near-exact limit, analytic case,
the gradient-free fast path, and batched all-pairs evaluation."""
import itertools
import time

import numpy as np
import pytest

import zeroswot.autodiff as ad
from zeroswot.autodiff import Tensor, no_grad
from zeroswot.ot import (OtConfig, WidthMismatch, cost_matrix,
                         pairwise_wasserstein, positional_augment, sinkhorn,
                         wasserstein_loss)


def test_positional_augment_column():
    h = Tensor(np.zeros((5, 3)))
    out = positional_augment(h, mu=10.0)
    np.testing.assert_allclose(out.data[:, 3], 10.0 * np.arange(5) / 4)
    single = positional_augment(Tensor(np.zeros((1, 3))), mu=10.0)
    assert single.data[0, 3] == 0.0


def test_cost_matrix_squared_distances():
    rng = np.random.default_rng(0)
    s, x = rng.normal(size=(4, 3)), rng.normal(size=(6, 3))
    c = cost_matrix(Tensor(s), Tensor(x))
    expected = ((s[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    np.testing.assert_allclose(c.data, expected, atol=1e-12)
    with pytest.raises(WidthMismatch):
        cost_matrix(Tensor(s), Tensor(rng.normal(size=(6, 4))))


def test_marginals_within_tolerance():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n, m = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        c = rng.uniform(0, 5, size=(n, m))
        plan = sinkhorn(c, OtConfig(lam=1.0, max_iters=500, tol=1e-7))
        assert plan.converged
        z = plan.plan
        assert np.abs(z.sum(axis=1) - 1 / n).sum() <= 1e-6
        assert np.abs(z.sum(axis=0) - 1 / m).sum() <= 1e-6


def test_near_exact_limit_matches_assignment():
    """At lam = 1e-3 the objective approaches the best permutation
    matching (uniform marginals, n = m): within 2% on 50 instances."""
    rng = np.random.default_rng(42)
    t0 = time.time()
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 7))
        s, x = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        c = ((s[:, None, :] - x[None, :, :]) ** 2).sum(-1)
        exact = min(sum(c[i, p[i]] for i in range(n))
                    for p in itertools.permutations(range(n))) / n
        plan = sinkhorn(c, OtConfig(lam=1e-3, max_iters=4000, tol=1e-8))
        worst = max(worst, abs(plan.objective - exact) / abs(exact))
    assert worst <= 0.02, f"worst relative gap {worst:.2%}"
    assert time.time() - t0 < 30.0


def test_two_by_two_analytic():
    """C = [[0,1],[1,0]], lam = 0.1.  By symmetry the plan is
    [[a, 1/2-a], [1/2-a, a]]; stationarity of the objective in a gives
    a = sigmoid(1/lam)/2, an independent closed form."""
    lam = 0.1
    a = 0.5 * np.exp(1 / lam) / (1 + np.exp(1 / lam))
    analytic = 2 * (0.5 - a) + lam * 2 * (a * np.log(a)
                                          + (0.5 - a) * np.log(0.5 - a))
    plan = sinkhorn(np.array([[0.0, 1.0], [1.0, 0.0]]),
                    OtConfig(lam=lam, max_iters=5000, tol=1e-13))
    assert abs(plan.objective - analytic) <= 1e-6
    np.testing.assert_allclose(plan.plan, [[a, 0.5 - a], [0.5 - a, a]],
                               atol=1e-9)


def test_convergence_flag_honest():
    c = np.random.default_rng(2).uniform(0, 5, size=(6, 6))
    plan = sinkhorn(c, OtConfig(lam=0.05, max_iters=1, tol=1e-12))
    assert not plan.converged and plan.iterations == 1


def test_fast_path_matches_graph_path():
    """With gradients disabled the solver runs in plain numpy; it must
    reproduce the taped computation exactly (same formula order)."""
    rng = np.random.default_rng(3)
    cfg = OtConfig(lam=0.7, max_iters=300, tol=1e-8)
    for _ in range(5):
        c = rng.uniform(0, 4, size=(int(rng.integers(2, 7)),
                                    int(rng.integers(2, 7))))
        graph = sinkhorn(Tensor(c, requires_grad=True), cfg)
        with no_grad():
            fast = sinkhorn(Tensor(c, requires_grad=True), cfg)
        assert fast.iterations == graph.iterations
        assert fast.objective == graph.objective
        np.testing.assert_array_equal(fast.plan, graph.plan)


def test_sinkhorn_rejects_nonfinite():
    with pytest.raises(ValueError):
        sinkhorn(np.array([[0.0, np.inf], [1.0, 0.0]]), OtConfig())


def test_wasserstein_loss_gradient_flows():
    rng = np.random.default_rng(4)
    hs = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    hx = Tensor(rng.normal(size=(4, 4)))
    loss, plan = wasserstein_loss(hs, hx, OtConfig(mu=2.0, lam=1.0,
                                                   max_iters=200, tol=1e-9))
    loss.backward()
    assert hs.grad is not None and np.all(np.isfinite(hs.grad))
    assert plan.plan.shape == (3, 4)


def test_debiased_self_distance_zero():
    rng = np.random.default_rng(5)
    h = Tensor(rng.normal(size=(4, 3)))
    cfg = OtConfig(mu=5.0, lam=1.0, max_iters=300, tol=1e-10, debiased=True)
    with no_grad():
        loss, _ = wasserstein_loss(h, h, cfg)
    assert abs(float(loss.data)) <= 1e-9


def test_pairwise_matches_individual_losses():
    rng = np.random.default_rng(6)
    cfg = OtConfig(mu=3.0, lam=1.0, max_iters=400, tol=1e-9)
    speech = [rng.normal(size=(int(rng.integers(2, 5)), 3)) for _ in range(4)]
    text = [rng.normal(size=(int(rng.integers(2, 5)), 3)) for _ in range(5)]
    got = pairwise_wasserstein(speech, text, cfg)
    with no_grad():
        for i, s in enumerate(speech):
            for j, x in enumerate(text):
                ref, _ = wasserstein_loss(Tensor(s), Tensor(x), cfg)
                assert abs(got[i, j] - float(ref.data)) <= 1e-5 * max(
                    1.0, abs(float(ref.data)))


def test_pairwise_debiased_diagonal_zero():
    rng = np.random.default_rng(7)
    states = [rng.normal(size=(3, 3)) for _ in range(4)]
    cfg = OtConfig(mu=3.0, lam=1.0, max_iters=400, tol=1e-10, debiased=True)
    d = pairwise_wasserstein(states, states, cfg)
    np.testing.assert_allclose(np.diag(d), 0.0, atol=1e-9)
    assert np.all(d + 1e-9 >= 0.0)  # divergence is nonnegative


def test_config_validation():
    with pytest.raises(ValueError):
        OtConfig(lam=0.0)
    with pytest.raises(ValueError):
        OtConfig(max_iters=0)
