"""Finite-difference checks for every tape operation, plus the tape
mechanics themselves (accumulation, broadcasting, no_grad)."""
import numpy as np
import pytest

import zeroswot.autodiff as ad
from zeroswot.autodiff import Parameter, ShapeMismatch, Tensor, no_grad
from zeroswot.gradcheck import NonFiniteGradient, grad_check

N_SEEDS = 20
TOL = 1e-6


def _readout(rng, t):
    """Random linear functional; a plain sum can sit in an op's null
    space (e.g. layer_norm) and make the check vacuous.

    The weights are a pure function of the output shape (``rng`` is
    ignored): finite differencing re-evaluates the function, so drawing
    from a shared generator here would change the functional between
    evaluations and wreck the numeric gradient.
    """
    seed = sum((i + 1) * d for i, d in enumerate(t.shape)) % (1 << 31)
    w = Tensor(np.random.default_rng(seed).normal(size=t.shape))
    return ad.sum_(ad.mul(t, w))


def _check(fn, inputs, tol=TOL, eps=1e-5):
    err = grad_check(fn, inputs, eps=eps)
    assert err <= tol, f"max relative gradient error {err:.3e}"


# ---- elementwise and reductions -----------------------------------------

@pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul])
def test_binary_broadcasting_ops(op):
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        shapes = [((4, 5), (4, 5)), ((4, 5), (1, 5)), ((4, 5), (4, 1)),
                  ((4, 5), ()), ((3, 1, 2), (1, 4, 2))]
        sa, sb = shapes[seed % len(shapes)]
        a = Tensor(rng.normal(size=sa), requires_grad=True)
        b = Tensor(rng.normal(size=sb), requires_grad=True)
        _check(lambda a_, b_: _readout(rng, op(a_, b_)), [a, b])


def test_div():
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)) * np.sign(rng.normal(size=(3, 4))),
                   requires_grad=True)
        _check(lambda a_, b_: _readout(rng, ad.div(a_, b_)), [a, b])


@pytest.mark.parametrize("op", [ad.exp, ad.tanh, ad.erf, ad.gelu])
def test_smooth_unary_ops(op):
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        _check(lambda a_: _readout(rng, op(a_)), [a])


def test_log_and_power():
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.uniform(0.3, 3.0, size=(4, 3)), requires_grad=True)
        _check(lambda a_: _readout(rng, ad.log(a_)), [a])
        _check(lambda a_: _readout(rng, ad.power(a_, 1.7)), [a])


def test_relu_away_from_kink():
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        data = rng.normal(size=(4, 4))
        data[np.abs(data) < 1e-3] = 0.5    # keep clear of the kink
        a = Tensor(data, requires_grad=True)
        _check(lambda a_: _readout(rng, ad.relu(a_)), [a])


@pytest.mark.parametrize("axis,keepdims", [(None, False), (0, False),
                                           (1, True), (-1, False)])
def test_sum_mean(axis, keepdims):
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        _check(lambda a_: _readout(rng, ad.sum_(a_, axis=axis, keepdims=keepdims)), [a])
        _check(lambda a_: _readout(rng, ad.mean(a_, axis=axis, keepdims=keepdims)), [a])


def test_mean_pool():
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
        _check(lambda a_: _readout(rng, ad.mean_pool(a_)), [a])


# ---- log-space reductions -----------------------------------------------

@pytest.mark.parametrize("axis", [None, 0, 1])
def test_logsumexp(axis):
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        _check(lambda a_: _readout(rng, ad.logsumexp(a_, axis=axis)), [a])


def test_logsumexp_neg_inf_rows():
    """-inf entries contribute nothing and produce zero gradient."""
    a = Tensor(np.array([[0.5, -np.inf, 1.0], [-np.inf, -np.inf, -np.inf]]),
               requires_grad=True)
    out = ad.logsumexp(a, axis=1)
    assert np.isneginf(out.data[1])
    assert np.isclose(out.data[0], np.logaddexp(0.5, 1.0))
    ad.sum_(ad.mul(out, np.array([1.0, 0.0]))).backward()
    assert a.grad[0, 1] == 0.0
    assert np.all(np.isfinite(a.grad[0, [0, 2]]))
    assert np.all(a.grad[1] == 0.0)


def test_logaddexp():
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(4, 3)) * 2, requires_grad=True)
        b = Tensor(rng.normal(size=(4, 3)) * 2, requires_grad=True)
        _check(lambda a_, b_: _readout(rng, ad.logaddexp(a_, b_)), [a, b])


def test_logaddexp_with_neg_inf():
    a = Tensor(np.array([-np.inf, 0.0]), requires_grad=True)
    b = Tensor(np.array([1.0, -np.inf]), requires_grad=True)
    out = ad.logaddexp(a, b)
    np.testing.assert_allclose(out.data, [1.0, 0.0])
    ad.sum_(out).backward()
    np.testing.assert_allclose(a.grad, [0.0, 1.0])
    np.testing.assert_allclose(b.grad, [1.0, 0.0])


@pytest.mark.parametrize("axis", [0, 1, -1])
def test_softmax_log_softmax(axis):
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(4, 5)) * 2, requires_grad=True)
        _check(lambda a_: _readout(rng, ad.softmax(a_, axis=axis)), [a])
        _check(lambda a_: _readout(rng, ad.log_softmax(a_, axis=axis)), [a])


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    s = ad.softmax(Tensor(rng.normal(size=(7, 9)) * 5))
    np.testing.assert_allclose(s.data.sum(axis=-1), np.ones(7), atol=1e-12)


# ---- shape ops ----------------------------------------------------------

def test_matmul_2d_and_batched():
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        _check(lambda a_, b_: _readout(rng, ad.matmul(a_, b_)), [a, b])
        c = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        d = Tensor(rng.normal(size=(2, 4, 5)), requires_grad=True)
        _check(lambda c_, d_: _readout(rng, ad.matmul(c_, d_)), [c, d])


def test_matmul_broadcast_batch():
    rng = np.random.default_rng(3)
    a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 5)), requires_grad=True)   # broadcast over batch
    _check(lambda a_, b_: _readout(rng, ad.matmul(a_, b_)), [a, b])


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_concat_reshape_permute_transpose():
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        _check(lambda a_, b_: _readout(rng, ad.concat([a_, b_], axis=0)), [a, b])
        c = Tensor(rng.normal(size=(2, 6)), requires_grad=True)
        _check(lambda c_: _readout(rng, ad.reshape(c_, (3, 4))), [c])
        d = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        _check(lambda d_: _readout(rng, ad.permute(d_, (2, 0, 1))), [d])
        _check(lambda c_: _readout(rng, ad.transpose(c_)), [c])


def test_gather_rows_accumulates_repeats():
    """A row picked twice receives the sum of both output gradients."""
    a = Tensor(np.arange(8.0).reshape(4, 2), requires_grad=True)
    out = ad.gather_rows(a, [1, 1, 3])
    ad.sum_(out).backward()
    np.testing.assert_array_equal(a.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])


def test_take_cols():
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        idx = rng.integers(0, 4, size=7)
        _check(lambda a_: _readout(rng, ad.take_cols(a_, idx)), [a])


def test_getitem_slices():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
        _check(lambda a_: _readout(rng, a_[1:4]), [a])
        _check(lambda a_: _readout(rng, a_[2:3]), [a])


def test_layer_norm_grad():
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
        g = Tensor(rng.uniform(0.5, 1.5, size=6), requires_grad=True)
        b = Tensor(rng.normal(size=6), requires_grad=True)
        _check(lambda x_, g_, b_: _readout(rng, ad.layer_norm(x_, g_, b_)),
               [x, g, b], tol=1e-5)


def test_layer_norm_statistics():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(5, 16)) * 3 + 2)
    out = ad.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)))
    np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.data.std(axis=-1), 1.0, atol=1e-3)


# ---- tape mechanics -----------------------------------------------------

def test_diamond_graph_accumulation():
    """d/dx of (x*x + x*x) is 4x: both branch gradients must land."""
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = ad.add(ad.mul(x, x), ad.mul(x, x))
    ad.sum_(y).backward()
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_reused_node_deep_chain():
    x = Tensor(np.array(2.0), requires_grad=True)
    h = ad.mul(x, x)           # x^2
    y = ad.mul(h, h)           # x^4
    y.backward()
    np.testing.assert_allclose(x.grad, 4 * 2.0 ** 3)


def test_backward_accumulates_across_calls():
    x = Tensor(np.ones(3), requires_grad=True)
    for _ in range(3):
        ad.sum_(ad.mul(x, 2.0)).backward()
    np.testing.assert_allclose(x.grad, np.full(3, 6.0))


def test_no_grad_blocks_recording():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = ad.mul(x, 3.0)
    assert y._parents == ()
    assert not y.requires_grad
    assert ad.is_grad_enabled()


def test_constant_inputs_get_no_grad():
    x = Tensor(np.ones(3))            # requires_grad defaults to False
    y = ad.mul(x, 2.0)
    assert not y.requires_grad
    ws = Tensor(np.ones(3), requires_grad=True)
    z = ad.sum_(ad.mul(ad.add(x, ws), 1.0))
    z.backward()
    assert x.grad is None
    np.testing.assert_allclose(ws.grad, np.ones(3))


def test_parameter_freeze():
    p = Parameter("w", np.ones((2, 2)))
    assert p.tensor.requires_grad
    p.freeze()
    assert p.frozen and not p.tensor.requires_grad
    live = Tensor(np.ones((2, 2)), requires_grad=True)
    out = ad.sum_(ad.mul(p.tensor, live))
    out.backward()
    assert p.grad is None
    np.testing.assert_allclose(live.grad, np.ones((2, 2)))


def test_nonfinite_gradient_detected():
    a = Tensor(np.array([1.0, 0.0]), requires_grad=True)
    with pytest.raises(NonFiniteGradient):
        grad_check(lambda a_: ad.sum_(ad.log(a_)), [a])
