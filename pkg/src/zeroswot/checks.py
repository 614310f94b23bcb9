"""Finite-difference audit of every differentiable loss surface.

Each named check builds a small random instance, runs the analytic
backward pass and compares against central differences.  The CLI prints
the table; tests assert the thresholds.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .compression import SubwordEncoder, subword_encode
from .ctc import ctc_loss, min_frames
from .encoder import ModelConfig
from .gradcheck import grad_check
from .ot import OtConfig, wasserstein_loss
from .training import total_loss
from .vocab import CtcLabels

__all__ = ["CHECKS", "run_check", "run_all", "THRESHOLD"]

THRESHOLD = 1e-4

_SMALL = ModelConfig(d=8, heads=2, ff_dim=16, acoustic_layers=1,
                     shared_layers=3, decoder_layers=1, subword_enc_layers=2,
                     feat_dim=4, taps=(2, 3))


def _feasible_labels(rng, n_frames: int, vocab: int) -> CtcLabels:
    while True:
        length = int(rng.integers(1, 4))
        ids = tuple(int(v) for v in rng.integers(1, vocab, size=length))
        labels = CtcLabels(ids=ids, mode="word")
        if min_frames(labels) <= n_frames:
            return labels


def _check_ctc(seed: int) -> float:
    rng = np.random.default_rng(seed)
    n, vocab = 6, 4
    labels = _feasible_labels(rng, n, vocab)
    a = Tensor(rng.normal(size=(n, vocab)), requires_grad=True)

    def f(a_):
        loss, feasible = ctc_loss(ad.log_softmax(a_, axis=1), labels)
        assert feasible
        return loss

    return grad_check(f, [a])


def _check_wasserstein(seed: int) -> float:
    rng = np.random.default_rng(seed)
    cfg = OtConfig(mu=10.0, lam=1.0, max_iters=100, tol=1e-9)
    s = Tensor(rng.normal(size=(int(rng.integers(2, 5)), 4)), requires_grad=True)
    x = Tensor(rng.normal(size=(int(rng.integers(2, 5)), 4)), requires_grad=True)
    return grad_check(lambda s_, x_: wasserstein_loss(s_, x_, cfg)[0], [s, x])


def _check_subword_encode(seed: int) -> float:
    rng = np.random.default_rng(seed)
    enc = SubwordEncoder("chk", rng, _SMALL)
    chunk = Tensor(rng.normal(size=(3, _SMALL.d)), requires_grad=True)
    # random readout weights: a plain feature sum of a layer-normed row is
    # constant, which would make the check vacuous
    w = Tensor(rng.normal(size=(_SMALL.d, 1)))
    return grad_check(lambda c: ad.sum_(ad.matmul(subword_encode(c, enc), w)),
                      [chunk])


def _check_total_loss(seed: int) -> float:
    rng = np.random.default_rng(seed)
    cfg = OtConfig(mu=10.0, lam=1.0, max_iters=100, tol=1e-9)
    n, vocab = 5, 4
    labels = _feasible_labels(rng, n, vocab)
    a = Tensor(rng.normal(size=(n, vocab)), requires_grad=True)
    s2 = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    s3 = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    t2 = rng.normal(size=(4, 4))
    t3 = rng.normal(size=(4, 4))

    def f(a_, s2_, s3_):
        ctc_term, feasible = ctc_loss(ad.log_softmax(a_, axis=1), labels)
        assert feasible
        loss, _ = total_loss({2: s2_, 3: s3_}, {2: t2, 3: t3}, ctc_term,
                             alpha=0.9, ot_cfg=cfg)
        return loss

    return grad_check(f, [a, s2, s3])


def _check_core_ops(seed: int) -> float:
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 3)), requires_grad=True)

    def f(a_, b_):
        h = ad.gelu(ad.matmul(a_, b_))
        h = ad.layer_norm(h, Tensor(np.ones(3)), Tensor(np.zeros(3)))
        return ad.sum_(ad.logsumexp(h, axis=1))

    return grad_check(f, [a, b])


CHECKS = {
    "ctc_loss": _check_ctc,
    "wasserstein_loss": _check_wasserstein,
    "subword_encode": _check_subword_encode,
    "total_loss": _check_total_loss,
    "core_ops": _check_core_ops,
}


def run_check(name: str, seeds: int = 20) -> float:
    """Worst relative gradient error of one check over `seeds` instances."""
    fn = CHECKS[name]
    return max(fn(seed) for seed in range(seeds))


def run_all(seeds: int = 20) -> dict[str, float]:
    return {name: run_check(name, seeds) for name in CHECKS}
