"""CTC-driven compression of frame sequences into subword-level states.

The frame-level argmax path picks character runs; runs are mean-pooled
(char compression), split at predicted separators into chunks, and each
chunk is summarized by a small transformer whose prepended cls output
becomes one subword state.  Gradients flow through the pooled values and
the chunk encoder, never through the argmax path itself.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .ctc import FrameLogProbs, collapse
from .encoder import ModelConfig, TransformerEncoder, sinusoidal_pos

__all__ = [
    "CharRepr", "Chunk", "SubwordRepr", "SubwordEncoder",
    "char_compress", "split_chunks", "subword_encode", "adapt",
    "length_gap", "NoCharacters", "NoChunks", "ADAPTER_MODES",
]

ADAPTER_MODES = ("none", "stride4", "char_only", "subword")


class NoCharacters(Exception):
    """The argmax path is entirely blank: nothing to compress."""


class NoChunks(Exception):
    """Separator splitting produced no chunks."""


@dataclass
class CharRepr:
    """Character-compressed sequence: pooled states, one run label per
    row, and the (log-space) pooled posteriors for inspection."""

    reprs: Tensor            # (n_char, d)
    labels: tuple[int, ...]  # run labels, no blanks
    probs: np.ndarray        # (n_char, |V|) log of mean run probability


@dataclass
class Chunk:
    reprs: Tensor            # (k, d) character states of one subword span
    labels: tuple[int, ...]


@dataclass
class SubwordRepr:
    reprs: Tensor            # (n_sw, d)

    @property
    def length(self) -> int:
        return self.reprs.shape[0]


def char_compress(a: Tensor, lp) -> CharRepr:
    """Mean-pool acoustic states over argmax runs, dropping blank runs.

    The argmax path is taken per frame with ties resolving to the lowest
    index; consecutive equal labels form one run.  Gradients flow through
    the pooling weights into ``a`` but not through the path choice.
    """
    lp_t = lp.log_probs if isinstance(lp, FrameLogProbs) else lp
    path = np.argmax(lp_t.data, axis=1)
    n = path.size
    runs: list[tuple[int, int, int]] = []  # (label, start, stop)
    start = 0
    for t in range(1, n + 1):
        if t == n or path[t] != path[start]:
            if path[start] != 0:
                runs.append((int(path[start]), start, t))
            start = t
    if not runs:
        raise NoCharacters("argmax path is all blank")

    pool = np.zeros((len(runs), n))
    for i, (_, s, e) in enumerate(runs):
        pool[i, s:e] = 1.0 / (e - s)
    reprs = ad.matmul(Tensor(pool), a)

    lp_np = lp_t.data
    probs = np.empty((len(runs), lp_np.shape[1]))
    for i, (_, s, e) in enumerate(runs):
        probs[i] = np.logaddexp.reduce(lp_np[s:e], axis=0) - np.log(e - s)
    return CharRepr(reprs, tuple(lbl for lbl, _, _ in runs), probs)


def split_chunks(cr: CharRepr, sep_id: int = 2,
                 include_separator: bool = False) -> list[Chunk]:
    """Cut the character sequence at predicted separators.

    Separator rows are discarded by default (``include_separator=True``
    pools each one into its preceding chunk instead).  Empty spans between
    consecutive separators are skipped.  The span after the last separator
    still forms a chunk.  A sequence with no separator at all falls back
    to a single whole chunk, with a warning.
    """
    labels = cr.labels
    if sep_id not in labels:
        warnings.warn("no separator predicted; falling back to one chunk",
                      stacklevel=2)
        return [Chunk(cr.reprs, labels)]
    chunks: list[Chunk] = []
    span_start = 0
    for i, lbl in enumerate(labels):
        if lbl != sep_id:
            continue
        stop = i + 1 if include_separator else i
        if i > span_start:  # at least one non-separator in the span
            chunks.append(Chunk(cr.reprs[span_start:stop], labels[span_start:stop]))
        span_start = i + 1
    if span_start < len(labels):
        chunks.append(Chunk(cr.reprs[span_start:], labels[span_start:]))
    return chunks


class SubwordEncoder:
    """Chunk summarizer: a trainable cls state is prepended, sinusoidal
    positions cover the k+1 rows, and three pre-LN layers plus the final
    layernorm produce the cls output as the subword state."""

    def __init__(self, name: str, rng: np.random.Generator, cfg: ModelConfig):
        self.d = cfg.d
        self.cls = Parameter(f"{name}.cls",
                             rng.normal(0.0, 1.0 / np.sqrt(cfg.d), size=(1, cfg.d)))
        self.stack = TransformerEncoder(name, rng, cfg.subword_enc_layers,
                                        cfg.d, cfg.heads, cfg.ff_dim,
                                        activation="gelu")

    def parameters(self) -> list[Parameter]:
        return [self.cls] + self.stack.parameters()


def subword_encode(chunk: Tensor, enc: SubwordEncoder) -> Tensor:
    """Summarize one (k, d) chunk into a single (1, d) state."""
    x = ad.concat([enc.cls.tensor, chunk], axis=0)
    x = ad.add(x, Tensor(sinusoidal_pos(x.shape[0], enc.d)))
    out = enc.stack(x)
    return out[0:1]


def adapt(a: Tensor, lp, mode: str, subword_enc: SubwordEncoder | None = None,
          sep_id: int = 2, include_separator: bool = False) -> SubwordRepr:
    """Apply the configured length adapter to acoustic states ``a``.

    none:      the states pass through unchanged.
    stride4:   non-overlapping stride-4 mean pooling (ragged tail pooled).
    char_only: character compression without subword grouping.
    subword:   full compression; one state per predicted subword chunk.
    """
    if mode not in ADAPTER_MODES:
        raise ValueError(f"unknown adapter mode {mode!r}")
    if mode == "none":
        return SubwordRepr(a)
    if mode == "stride4":
        n = a.shape[0]
        m = -(-n // 4)
        pool = np.zeros((m, n))
        for i in range(m):
            s, e = 4 * i, min(4 * (i + 1), n)
            pool[i, s:e] = 1.0 / (e - s)
        return SubwordRepr(ad.matmul(Tensor(pool), a))
    cr = char_compress(a, lp)
    if mode == "char_only":
        return SubwordRepr(cr.reprs)
    if subword_enc is None:
        raise ValueError("subword mode needs a SubwordEncoder")
    chunks = split_chunks(cr, sep_id=sep_id, include_separator=include_separator)
    if not chunks:
        raise NoChunks("separator splitting produced no chunks")
    states = [subword_encode(c.reprs, subword_enc) for c in chunks]
    return SubwordRepr(ad.concat(states, axis=0))


def length_gap(n_speech: int, m_text: int) -> tuple[int, float]:
    """(absolute difference, length ratio n/m)."""
    return abs(n_speech - m_text), n_speech / m_text


def collapse_path(path, blank_id: int = 0) -> list[int]:
    """Re-export of the CTC collapse rule for alignment checks."""
    return collapse(path, blank_id)
