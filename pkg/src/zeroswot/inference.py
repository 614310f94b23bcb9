"""Zero-shot decoding, beam search, retrieval and length reporting.

The zero-shot path swaps the text front-end for the aligned speech
stack: compressed speech states run through the frozen shared encoder
and the unchanged MT decoder reads them by cross-attention.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import compression
from .autodiff import Tensor, no_grad
from .encoder import Decoder
from .ot import OtConfig, pairwise_wasserstein
from .pipeline import MtModel, SpeechStack
from .vocab import SubwordVocab, text_to_ids

__all__ = [
    "ZeroShotModel", "zero_shot_encode", "beam_search", "translate_speech",
    "translate_text", "token_accuracy", "retrieve", "RetrievalReport",
    "length_report", "thread_cap",
]


def thread_cap() -> int:
    """Worker parallelism cap from ZEROSWOT_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("ZEROSWOT_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class ZeroShotModel:
    """The spliced system: aligned speech stack + frozen MT model."""

    stack: SpeechStack
    mt: MtModel


def zero_shot_encode(model: ZeroShotModel, frames: np.ndarray) -> Tensor:
    """Shared-encoder output for raw frames (no gradients recorded)."""
    with no_grad():
        fwd = model.stack.forward(frames)
        return model.mt.shared(fwd.embedded)


# ---- beam search --------------------------------------------------------

def beam_search(decoder: Decoder, enc_out: Tensor, bos_id: int, eos_id: int,
                beam_size: int = 5, max_len: int = 32) -> tuple[list[int], float]:
    """Length-normalized beam search.

    Hypotheses are ranked by total log-probability divided by generated
    length (eos included).  Every expansion that ends in eos enters the
    finished pool, so the returned hypothesis scores at least as high as
    any finished hypothesis that was pruned.  ``beam_size=1`` reproduces
    greedy decoding.  Ties break toward lower token ids.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    with no_grad():
        live: list[tuple[list[int], float]] = [([bos_id], 0.0)]
        finished: list[tuple[list[int], float]] = []
        for _ in range(max_len):
            cands: list[tuple[list[int], float]] = []
            for ids, logp in live:
                logits = decoder(ids, enc_out).data[-1]
                row = logits - np.logaddexp.reduce(logits)
                top = np.argsort(-row, kind="stable")[:beam_size]
                for t in top:
                    cands.append((ids + [int(t)], logp + float(row[t])))
            live = []
            cands.sort(key=lambda c: (-c[1], c[0]))
            for ids, logp in cands:
                gen = len(ids) - 1
                if ids[-1] == eos_id:
                    finished.append((ids[1:-1], logp / gen))
                elif len(live) < beam_size:
                    live.append((ids, logp))
            if not live:
                break
        for ids, logp in live:  # length cap reached without eos
            finished.append((ids[1:], logp / max(1, len(ids) - 1)))
        finished.sort(key=lambda c: (-c[1], c[0]))
        return finished[0]


def translate_text(mt: MtModel, transcription: str, subwords: SubwordVocab,
                   beam_size: int = 5, max_len: int = 32) -> list[int]:
    """Toy-MT translation of a source sentence (token ids, no specials)."""
    with no_grad():
        enc = mt.text.encode(text_to_ids(transcription, subwords))
    ids, _ = beam_search(mt.decoder, enc, subwords.lang_id, subwords.eos_id,
                         beam_size, max_len)
    return ids


def translate_speech(model: ZeroShotModel, frames: np.ndarray,
                     subwords: SubwordVocab, beam_size: int = 5,
                     max_len: int = 32) -> list[int]:
    """Zero-shot translation of raw frames (token ids, no specials)."""
    enc = zero_shot_encode(model, frames)
    ids, _ = beam_search(model.mt.decoder, enc, subwords.lang_id,
                         subwords.eos_id, beam_size, max_len)
    return ids


def token_accuracy(hyp, ref) -> float:
    """Positional token matches normalized by the longer sequence."""
    hyp, ref = list(hyp), list(ref)
    if not hyp and not ref:
        return 1.0
    hits = sum(1 for a, b in zip(hyp, ref) if a == b)
    return hits / max(len(hyp), len(ref))


# ---- retrieval ----------------------------------------------------------

@dataclass
class RetrievalReport:
    metric: str
    accuracy: float
    n: int
    mismatches: list[tuple[int, int]]   # (query index, retrieved index)


def _cosine_rank(speech_states, text_states) -> list[int]:
    sp = np.stack([s.mean(axis=0) for s in speech_states])
    tx = np.stack([t.mean(axis=0) for t in text_states])
    sp = sp / np.linalg.norm(sp, axis=1, keepdims=True)
    tx = tx / np.linalg.norm(tx, axis=1, keepdims=True)
    sims = sp @ tx.T
    return [int(i) for i in np.argmax(sims, axis=1)]


_POOL_STATE: dict = {}


def _pool_init(text_states, cfg):
    _POOL_STATE["texts"] = text_states
    _POOL_STATE["cfg"] = cfg


def _pool_rows(speech_chunk) -> np.ndarray:
    return pairwise_wasserstein(speech_chunk, _POOL_STATE["texts"],
                                _POOL_STATE["cfg"])


def _wasserstein_rank(speech_states, text_states, cfg: OtConfig) -> list[int]:
    workers = min(thread_cap(), len(speech_states))
    if workers <= 1:
        dists = pairwise_wasserstein(speech_states, text_states, cfg)
    else:
        chunks = [speech_states[k::workers] for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers, initializer=_pool_init,
                                 initargs=(text_states, cfg)) as pool:
            parts = list(pool.map(_pool_rows, chunks))
        dists = np.zeros((len(speech_states), len(text_states)))
        for k, part in enumerate(parts):
            dists[k::workers] = part
    return [int(i) for i in np.argmin(dists, axis=1)]


def retrieve(speech_states, text_states, metric: str,
             cfg: OtConfig) -> RetrievalReport:
    """Match each speech encoding to its text encoding among all
    candidates.  ``metric`` is ``cosine_meanpool`` (cosine similarity of
    time-mean-pooled states) or ``wasserstein`` (the OT objective under
    ``cfg`` as a distance).  Query i is correct when it retrieves index i.
    """
    speech_states = [np.asarray(s, dtype=np.float64) for s in speech_states]
    text_states = [np.asarray(t, dtype=np.float64) for t in text_states]
    if len(speech_states) != len(text_states):
        raise ValueError("speech and text sets must pair up")
    if metric == "cosine_meanpool":
        picks = _cosine_rank(speech_states, text_states)
    elif metric == "wasserstein":
        picks = _wasserstein_rank(speech_states, text_states, cfg)
    else:
        raise ValueError(f"unknown retrieval metric {metric!r}")
    mism = [(i, p) for i, p in enumerate(picks) if p != i]
    acc = 1.0 - len(mism) / max(1, len(picks))
    return RetrievalReport(metric, acc, len(picks), mism)


# ---- length reporting ---------------------------------------------------

def length_report(examples, model: ZeroShotModel,
                  subwords: SubwordVocab) -> dict:
    """Compare speech-path length n' (specials included) with text length
    m (specials included) per example."""
    rows = []
    failed = []
    with no_grad():
        for ex in examples:
            m = len(text_to_ids(ex.transcription, subwords))
            try:
                fwd = model.stack.forward(ex.frames)
            except (compression.NoCharacters, compression.NoChunks):
                failed.append(ex.id)
                continue
            n_sp = fwd.embedded.shape[0]
            diff, ratio = compression.length_gap(n_sp, m)
            rows.append({"id": ex.id, "n_speech": n_sp, "m_text": m,
                         "abs_diff": diff, "ratio": ratio})
    out = {
        "per_example": rows,
        "failed": failed,
        "mean_abs_diff": float(np.mean([r["abs_diff"] for r in rows])) if rows else None,
        "mean_ratio": float(np.mean([r["ratio"] for r in rows])) if rows else None,
    }
    return out
