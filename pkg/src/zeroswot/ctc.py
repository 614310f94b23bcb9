"""CTC loss and decoding over per-frame log-probabilities.

The loss is the standard forward DP over the blank-interleaved label
sequence, computed in log space on the autodiff tape so gradients come
for free.  Targets that need more frames than available are infeasible:
the loss is +inf with a flag rather than an exception, so training loops
can skip and count them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .vocab import CtcLabels

__all__ = ["FrameLogProbs", "FramePath", "ctc_head", "ctc_loss",
           "greedy_decode", "collapse", "min_frames"]

BLANK_ID = 0


@dataclass
class FrameLogProbs:
    """(n, |V|) per-frame log-probabilities; every row sums to one in
    probability space (checked to 1e-9 at construction)."""

    log_probs: Tensor

    def __post_init__(self):
        lp = self.log_probs.data
        if lp.ndim != 2:
            raise ValueError(f"log-probs must be 2-D, got {lp.shape}")
        rows = np.logaddexp.reduce(lp, axis=1)
        if not np.all(np.abs(rows) <= 1e-9):
            raise ValueError("log-prob rows do not normalize")

    @property
    def n_frames(self) -> int:
        return self.log_probs.data.shape[0]


@dataclass(frozen=True)
class FramePath:
    """Per-frame argmax labels (may contain blanks)."""

    labels: tuple[int, ...]


def ctc_head(a: Tensor, w, b) -> FrameLogProbs:
    """Project acoustic states to letter log-probabilities."""
    w_t = w.tensor if hasattr(w, "tensor") else w
    b_t = b.tensor if hasattr(b, "tensor") else b
    return FrameLogProbs(ad.log_softmax(ad.add(ad.matmul(a, w_t), b_t), axis=1))


def _label_ids(labels) -> list[int]:
    if isinstance(labels, CtcLabels):
        return list(labels.ids)
    return list(labels)


def min_frames(labels) -> int:
    """Fewest frames that can emit the target: one per label plus one
    mandatory blank between adjacent repeats."""
    z = _label_ids(labels)
    return len(z) + sum(1 for i in range(len(z) - 1) if z[i] == z[i + 1])


def ctc_loss(lp, labels) -> tuple[Tensor, bool]:
    """Negative log-probability of ``labels`` under the frame posteriors.

    Returns ``(loss, feasible)``.  When the target cannot fit in the
    available frames the loss is +inf and ``feasible`` is False; no
    exception is raised.
    """
    lp_t = lp.log_probs if isinstance(lp, FrameLogProbs) else lp
    z = _label_ids(labels)
    n = lp_t.data.shape[0]
    if not z:
        raise ValueError("empty CTC target")
    if n < min_frames(z):
        return Tensor(np.inf), False

    # Blank-interleaved extended target.
    ext = np.empty(2 * len(z) + 1, dtype=np.intp)
    ext[0::2] = BLANK_ID
    ext[1::2] = z
    s_len = ext.size

    # Mask allowing the skip transition s-2 -> s (label positions whose
    # label differs from the one two slots back).
    skip_mask = np.full(s_len, -np.inf)
    for s in range(2, s_len):
        if ext[s] != BLANK_ID and ext[s] != ext[s - 2]:
            skip_mask[s] = 0.0
    skip_mask_t = Tensor(skip_mask)

    lp_ext = ad.take_cols(lp_t, ext)  # (n, s_len)

    init_mask = np.full(s_len, -np.inf)
    init_mask[0] = 0.0
    if s_len > 1:
        init_mask[1] = 0.0
    alpha = ad.add(lp_ext[0], Tensor(init_mask))

    neg1 = Tensor(np.full(1, -np.inf))
    neg2 = Tensor(np.full(2, -np.inf))
    for t in range(1, n):
        stay = ad.logaddexp(alpha, ad.concat([neg1, alpha[:-1]]))
        if s_len > 2:
            skip = ad.add(ad.concat([neg2, alpha[:-2]]), skip_mask_t)
            stay = ad.logaddexp(stay, skip)
        alpha = ad.add(lp_ext[t], stay)

    if s_len > 1:
        total = ad.logaddexp(alpha[-1], alpha[-2])
    else:
        total = alpha[-1]
    return ad.mul(total, -1.0), True


def collapse(path, blank_id: int = BLANK_ID) -> list[int]:
    """CTC collapse: merge consecutive repeats, then drop blanks."""
    out: list[int] = []
    prev = None
    for p in path:
        if p != prev:
            if p != blank_id:
                out.append(int(p))
            prev = p
    return out


def greedy_decode(lp) -> tuple[FramePath, list[int]]:
    """Per-frame argmax (ties resolve to the lowest index) and its
    collapsed label sequence."""
    lp_t = lp.log_probs if isinstance(lp, FrameLogProbs) else lp
    path = np.argmax(lp_t.data, axis=1)
    return FramePath(tuple(int(p) for p in path)), collapse(path)
