"""Central-difference gradient verification for tape-recorded functions."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, no_grad

__all__ = ["grad_check", "NonFiniteGradient"]


class NonFiniteGradient(Exception):
    """An analytic gradient contained nan or inf."""


def grad_check(f, inputs: list[Tensor], eps: float = 1e-5) -> float:
    """Compare analytic and numeric gradients of ``f`` at ``inputs``.

    ``f`` maps the input tensors to a scalar Tensor and must be a pure
    function of their ``.data`` (it is re-evaluated under perturbation).
    Returns the maximum relative error
    ``|a - n| / max(1e-8, |a| + |n|)`` over every input element.
    """
    for t in inputs:
        if not t.requires_grad:
            raise ValueError("grad_check inputs must require grad")
        t.grad = None
    out = f(*inputs)
    if out.data.shape != ():
        raise ValueError("grad_check target must be scalar")
    out.backward()

    analytic = []
    for t in inputs:
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite analytic gradient (shape {t.data.shape})")
        analytic.append(g.copy())

    max_err = 0.0
    with no_grad():
        for t, ag in zip(inputs, analytic):
            base = t.data.copy()
            for idx in np.ndindex(base.shape):
                t.data[idx] = base[idx] + eps
                f_plus = float(f(*inputs).data)
                t.data[idx] = base[idx] - eps
                f_minus = float(f(*inputs).data)
                t.data[idx] = base[idx]
                numeric = (f_plus - f_minus) / (2.0 * eps)
                a = ag[idx]
                err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
                if err > max_err:
                    max_err = err
    return max_err
