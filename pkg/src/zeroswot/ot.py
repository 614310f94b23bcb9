"""Entropy-regularized optimal transport between state sequences.

Sequences are augmented with a scaled relative-position coordinate, a
squared-euclidean cost matrix is formed, and a log-domain Sinkhorn solver
finds the entropic transport plan under uniform marginals.  Gradients
flow by unrolling the executed iterations on the autodiff tape.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = ["OtConfig", "TransportPlan", "positional_augment", "cost_matrix",
           "sinkhorn", "wasserstein_loss", "pairwise_wasserstein",
           "WidthMismatch"]


class WidthMismatch(Exception):
    """The two sequences have different state widths."""


@dataclass(frozen=True)
class OtConfig:
    mu: float = 10.0          # positional coordinate scale
    lam: float = 1.0          # entropic regularization strength
    max_iters: int = 200
    tol: float = 1e-6         # max marginal L1 error declaring convergence
    debiased: bool = False

    def __post_init__(self):
        if self.lam <= 0.0:
            raise ValueError("lam must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class TransportPlan:
    plan: np.ndarray          # (n, m), rows sum to 1/n, columns to 1/m
    objective: float
    iterations: int
    converged: bool


def positional_augment(h: Tensor, mu: float) -> Tensor:
    """Append a position column mu * v with v_i = i / (len - 1) running
    0..1 (a single state gets v = [0])."""
    n = h.shape[0]
    if n == 1:
        v = np.zeros((1, 1))
    else:
        v = (np.arange(n, dtype=np.float64) / (n - 1))[:, None]
    return ad.concat([h, Tensor(mu * v)], axis=1)


def cost_matrix(hs: Tensor, hx: Tensor) -> Tensor:
    """Pairwise squared euclidean distances C[i, j] = ||hs_i - hx_j||^2."""
    if hs.shape[1] != hx.shape[1]:
        raise WidthMismatch(f"state widths differ: {hs.shape[1]} vs {hx.shape[1]}")
    s_sq = ad.sum_(ad.mul(hs, hs), axis=1, keepdims=True)          # (n, 1)
    x_sq = ad.reshape(ad.sum_(ad.mul(hx, hx), axis=1), (1, -1))    # (1, m)
    cross = ad.matmul(hs, ad.transpose(hx))
    return ad.sub(ad.add(s_sq, x_sq), ad.mul(cross, 2.0))


def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    """Same max-shifted log-sum-exp formula the autodiff op uses, so the
    fast path below tracks the graph path to rounding error."""
    mx = np.max(x, axis=axis, keepdims=True)
    return mx + np.log(np.sum(np.exp(x - mx), axis=axis, keepdims=True))


def _sinkhorn_fast(c: np.ndarray, cfg: OtConfig) -> tuple[Tensor, Tensor, int, bool]:
    """Gradient-free twin of ``_sinkhorn_graph``: identical update rule
    executed in plain numpy (the unrolled tape is pure overhead when no
    input needs a gradient, e.g. validation and retrieval)."""
    n, m = c.shape
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    lam = cfg.lam
    lam_log_a = lam * np.log(a)[:, None]
    lam_log_b = lam * np.log(b)[None, :]
    inv_lam = 1.0 / lam

    f = np.zeros((n, 1))
    g = np.zeros((1, m))
    iters = 0
    converged = False
    while iters < cfg.max_iters:
        f = _lse((g - c) * inv_lam, axis=1) * -lam + lam_log_a
        g = _lse((f - c) * inv_lam, axis=0) * -lam + lam_log_b
        iters += 1
        log_z = (f + g - c) * inv_lam
        z = np.exp(log_z)
        err = max(np.abs(z.sum(axis=1) - a).sum(), np.abs(z.sum(axis=0) - b).sum())
        if err < cfg.tol:
            converged = True
            break

    log_z = (f + g - c) * inv_lam
    z = np.exp(log_z)
    objective = np.sum(z * c) + lam * np.sum(z * log_z)
    return Tensor(objective), Tensor(log_z), iters, converged


def _sinkhorn_graph(c: Tensor, cfg: OtConfig) -> tuple[Tensor, Tensor, int, bool]:
    """Unrolled log-domain Sinkhorn under uniform marginals.

    Returns (objective tensor, log-plan tensor, iterations, converged).
    The plan is Z = exp((f + g - C) / lam); each round updates f then g,
    making the column marginal exact, so convergence is measured by the
    worse of the two marginal L1 errors.
    """
    if not ad.is_grad_enabled() or not c.requires_grad:
        return _sinkhorn_fast(c.data, cfg)
    n, m = c.shape
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    lam = cfg.lam
    lam_log_a = Tensor(lam * np.log(a)[:, None])   # (n, 1)
    lam_log_b = Tensor(lam * np.log(b)[None, :])   # (1, m)
    inv_lam = 1.0 / lam

    f = Tensor(np.zeros((n, 1)))
    g = Tensor(np.zeros((1, m)))
    iters = 0
    converged = False
    while iters < cfg.max_iters:
        f = ad.add(ad.mul(ad.logsumexp(ad.mul(ad.sub(g, c), inv_lam),
                                       axis=1, keepdims=True), -lam), lam_log_a)
        g = ad.add(ad.mul(ad.logsumexp(ad.mul(ad.sub(f, c), inv_lam),
                                       axis=0, keepdims=True), -lam), lam_log_b)
        iters += 1
        log_z = (f.data + g.data - c.data) * inv_lam
        z = np.exp(log_z)
        err = max(np.abs(z.sum(axis=1) - a).sum(), np.abs(z.sum(axis=0) - b).sum())
        if err < cfg.tol:
            converged = True
            break

    log_z_t = ad.mul(ad.sub(ad.add(f, g), c), inv_lam)
    z_t = ad.exp(log_z_t)
    cost_term = ad.sum_(ad.mul(z_t, c))
    neg_entropy = ad.sum_(ad.mul(z_t, log_z_t))     # sum Z log Z = -H(Z)
    objective = ad.add(cost_term, ad.mul(neg_entropy, lam))
    return objective, log_z_t, iters, converged


def sinkhorn(c, cfg: OtConfig) -> TransportPlan:
    """Solve entropic OT for a cost matrix (array or Tensor)."""
    c_t = c if isinstance(c, Tensor) else Tensor(c)
    if not np.all(np.isfinite(c_t.data)):
        raise ValueError("cost matrix must be finite")
    obj, log_z, iters, converged = _sinkhorn_graph(c_t, cfg)
    return TransportPlan(np.exp(log_z.data), float(obj.data), iters, converged)


def _single_loss(hs: Tensor, hx: Tensor, cfg: OtConfig) -> tuple[Tensor, TransportPlan]:
    c = cost_matrix(positional_augment(hs, cfg.mu), positional_augment(hx, cfg.mu))
    obj, log_z, iters, converged = _sinkhorn_graph(c, cfg)
    return obj, TransportPlan(np.exp(log_z.data), float(obj.data), iters, converged)


def _augment_np(h: np.ndarray, mu: float) -> np.ndarray:
    n = h.shape[0]
    v = np.zeros((n, 1)) if n == 1 else (np.arange(n) / (n - 1))[:, None]
    return np.concatenate([h, mu * v], axis=1)


def _batched_objectives(costs: np.ndarray, cfg: OtConfig) -> np.ndarray:
    """Sinkhorn objectives for a (B, n, m) stack of cost matrices.  The
    batch stops when its worst member's marginals are within tol."""
    _, n, m = costs.shape
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    lam = cfg.lam
    inv_lam = 1.0 / lam
    lam_log_a = lam * np.log(a)[None, :, None]
    lam_log_b = lam * np.log(b)[None, None, :]
    f = np.zeros((costs.shape[0], n, 1))
    g = np.zeros((costs.shape[0], 1, m))
    for _ in range(cfg.max_iters):
        f = _lse((g - costs) * inv_lam, axis=2) * -lam + lam_log_a
        g = _lse((f - costs) * inv_lam, axis=1) * -lam + lam_log_b
        z = np.exp((f + g - costs) * inv_lam)
        err = max(np.abs(z.sum(axis=2) - a).sum(axis=1).max(),
                  np.abs(z.sum(axis=1) - b).sum(axis=1).max())
        if err < cfg.tol:
            break
    log_z = (f + g - costs) * inv_lam
    z = np.exp(log_z)
    return np.sum(z * costs, axis=(1, 2)) + lam * np.sum(z * log_z, axis=(1, 2))


def pairwise_wasserstein(speech_states, text_states, cfg: OtConfig) -> np.ndarray:
    """All-pairs OT objectives, batched by shape.

    Returns a (len(speech), len(text)) matrix of ``wasserstein_loss``
    values.  Pairs sharing (n, m) are solved together as one stacked
    Sinkhorn run, which is what makes retrieval over an entire corpus
    affordable; a batch only stops iterating once every member has
    converged, so values can sit slightly past an individually stopped
    solve (well under the convergence tolerance).
    """
    aug_s = [_augment_np(np.asarray(s, dtype=np.float64), cfg.mu)
             for s in speech_states]
    aug_x = [_augment_np(np.asarray(x, dtype=np.float64), cfg.mu)
             for x in text_states]
    out = np.zeros((len(aug_s), len(aug_x)))
    groups: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for i, s in enumerate(aug_s):
        for j, x in enumerate(aug_x):
            groups.setdefault((s.shape[0], x.shape[0]), []).append((i, j))
    for pairs in groups.values():
        costs = np.stack([
            (np.sum(aug_s[i] ** 2, axis=1)[:, None]
             + np.sum(aug_x[j] ** 2, axis=1)[None, :]
             - 2.0 * aug_s[i] @ aug_x[j].T)
            for i, j in pairs])
        vals = _batched_objectives(costs, cfg)
        for (i, j), v in zip(pairs, vals):
            out[i, j] = v
    if cfg.debiased:
        self_s = np.array([_batched_objectives(
            np.stack([(np.sum(s ** 2, axis=1)[:, None]
                       + np.sum(s ** 2, axis=1)[None, :] - 2.0 * s @ s.T)]),
            cfg)[0] for s in aug_s])
        self_x = np.array([_batched_objectives(
            np.stack([(np.sum(x ** 2, axis=1)[:, None]
                       + np.sum(x ** 2, axis=1)[None, :] - 2.0 * x @ x.T)]),
            cfg)[0] for x in aug_x])
        out = out - 0.5 * (self_s[:, None] + self_x[None, :])
    return out


def wasserstein_loss(hs: Tensor, hx: Tensor, cfg: OtConfig) -> tuple[Tensor, TransportPlan]:
    """Entropic OT objective between two state sequences.

    With ``cfg.debiased`` the Sinkhorn divergence
    OT(s, x) - (OT(s, s) + OT(x, x)) / 2 is returned instead (zero for
    identical inputs); the reported plan is always the cross plan.
    """
    obj, plan = _single_loss(hs, hx, cfg)
    if not cfg.debiased:
        return obj, plan
    obj_ss, plan_ss = _single_loss(hs, hs, cfg)
    obj_xx, plan_xx = _single_loss(hx, hx, cfg)
    debiased = ad.sub(obj, ad.mul(ad.add(obj_ss, obj_xx), 0.5))
    return debiased, TransportPlan(plan.plan, float(debiased.data),
                                   plan.iterations,
                                   plan.converged and plan_ss.converged
                                   and plan_xx.converged)
