"""Training loops: toy MT pretraining and speech-encoder alignment.

The alignment stage minimizes a weighted sum of per-tap optimal-transport
distances to the frozen text branch plus the CTC loss; the MT stage is
plain label-smoothed cross-entropy.  Both loops are deterministic under
their seeds.  The speech trainer only ever sees frames and
transcriptions — translations exist solely on the MT side.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import compression
from .autodiff import Tensor, no_grad
from .checkpoint import ManifestMismatch, load_checkpoint, save_checkpoint
from .ctc import ctc_loss
from .ot import OtConfig, wasserstein_loss
from .optim import AdamW, lr_schedule
from .pipeline import MtModel, SpeechStack
from .vocab import (CtcLabels, LetterVocab, SubwordVocab,
                    build_ctc_labels, text_to_ids)

__all__ = [
    "TrainConfig", "total_loss", "mask_speech", "expected_masked_fraction",
    "extract_text_targets", "OnlineTargets", "OfflineTargets",
    "train_toy_mt", "train_speech_encoder", "average_checkpoints",
    "TapMismatch", "MissingExample", "label_smoothed_ce",
]


class TapMismatch(Exception):
    """Speech and text tap sets disagree."""


class MissingExample(Exception):
    """Offline targets have no entry for a requested example."""


@dataclass
class TrainConfig:
    """Knobs for one training stage (MT or speech alignment)."""

    seed: int = 0
    steps: int = 5000
    batch_size: int = 16
    base_lr: float = 1e-3
    warmup_steps: int = 200
    weight_decay: float = 0.0
    alpha: float = 0.9               # OT weight in the total loss
    ot: OtConfig = field(default_factory=OtConfig)
    validate_every: int = 100
    patience: int = 10
    val_examples: int = 0            # 0 = use the whole validation set
    label_smoothing: float = 0.1
    mt_target_acc: float = 0.98
    mask_time_prob: float = 0.0
    mask_time_len: int = 10
    mask_chan_prob: float = 0.0
    mask_chan_len: int = 2
    offline_targets: bool = True
    # ablation switches
    no_speech_embedder: bool = False
    no_aux_wass: bool = False
    adapter_mode: str = "subword"
    label_mode: str = "subword_unk"
    include_separator: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.adapter_mode not in compression.ADAPTER_MODES:
            raise ValueError(f"unknown adapter mode {self.adapter_mode!r}")


# ---- loss assembly ------------------------------------------------------

def total_loss(speech_taps: dict[int, Tensor], text_taps: dict, ctc_term: Tensor,
               alpha: float, ot_cfg: OtConfig) -> tuple[Tensor, dict]:
    """alpha-weighted mean of per-tap OT losses plus (1 - alpha) CTC.

    ``text_taps`` values may be Tensors or plain arrays (offline targets).
    Returns the scalar loss and a float report with one entry per term.
    """
    if set(speech_taps) != set(text_taps):
        raise TapMismatch(f"tap sets differ: {sorted(speech_taps)} vs {sorted(text_taps)}")
    report = {"wass": {}, "ctc": float(ctc_term.data)}
    taps = sorted(speech_taps)
    terms = []
    for l in taps:
        target = text_taps[l]
        target_t = target if isinstance(target, Tensor) else Tensor(target)
        w_l, _ = wasserstein_loss(speech_taps[l], target_t, ot_cfg)
        report["wass"][l] = float(w_l.data)
        terms.append(ad.mul(w_l, alpha / len(taps)))
    total = ad.mul(ctc_term, 1.0 - alpha)
    for t in terms:
        total = ad.add(total, t)
    report["total"] = float(total.data)
    return total, report


def label_smoothed_ce(logits: Tensor, targets, eps: float) -> Tensor:
    """Mean per-token label-smoothed cross entropy."""
    targets = np.asarray(targets, dtype=np.intp)
    t, v = logits.shape
    logp = ad.log_softmax(logits, axis=1)
    flat = ad.reshape(logp, (t * v,))
    picked = ad.gather_rows(flat, np.arange(t) * v + targets)
    nll = ad.mul(ad.sum_(picked), -1.0 / t)
    smooth = ad.mul(ad.sum_(logp), -1.0 / (t * v))
    return ad.add(ad.mul(nll, 1.0 - eps), ad.mul(smooth, eps))


# ---- speech masking -----------------------------------------------------

def mask_speech(frames: np.ndarray, time_prob: float, time_len: int,
                chan_prob: float, chan_len: int,
                rng: np.random.Generator) -> np.ndarray:
    """Zero random time spans and channel bands (off when both probs are 0).

    Every frame (channel) may start a span with the given probability;
    spans truncate at the edge.  Time spans are drawn before channel
    bands, so the draw order is reproducible under the rng."""
    out = frames.copy()
    l, f = out.shape
    if time_prob > 0.0:
        starts = rng.random(l) < time_prob
        for s in np.nonzero(starts)[0]:
            out[s:s + time_len] = 0.0
    if chan_prob > 0.0:
        starts = rng.random(f) < chan_prob
        for s in np.nonzero(starts)[0]:
            out[:, s:s + chan_len] = 0.0
    return out


def expected_masked_fraction(length: int, prob: float, span: int) -> float:
    """Closed-form expectation of the masked fraction along one axis:
    position t is covered by min(t+1, span) potential starts."""
    t = np.arange(length)
    covered = np.minimum(t + 1, span)
    return float(np.mean(1.0 - (1.0 - prob) ** covered))


# ---- text-side targets --------------------------------------------------

class OnlineTargets:
    """Compute text-branch taps on the fly (no gradient, frozen branch)."""

    def __init__(self, mt: MtModel, subwords: SubwordVocab, taps):
        self.mt = mt
        self.subwords = subwords
        self.taps = tuple(taps)

    def get(self, example_id: int, transcription: str) -> dict[int, np.ndarray]:
        with no_grad():
            ids = text_to_ids(transcription, self.subwords)
            _, tap_map = self.mt.text.encode_with_taps(ids, self.taps)
        return {l: t.data for l, t in tap_map.items()}


class OfflineTargets:
    """Read taps persisted by :func:`extract_text_targets`."""

    def __init__(self, directory):
        self.directory = Path(directory)
        index_path = self.directory / "index.json"
        if not index_path.exists():
            raise MissingExample(f"no offline targets at {self.directory}")
        self.index = {int(k): v for k, v in
                      json.loads(index_path.read_text()).items()}

    def get(self, example_id: int, transcription: str) -> dict[int, np.ndarray]:
        if example_id not in self.index:
            raise MissingExample(f"no offline target for example {example_id}")
        loaded = load_checkpoint(self.directory / self.index[example_id])
        return {int(name.split("_", 1)[1]): arr
                for name, (arr, _) in loaded.items()}


def extract_text_targets(corpus, mt: MtModel, subwords: SubwordVocab, taps,
                         out_dir) -> OfflineTargets:
    """Run the frozen text branch once per example and persist the tap
    tensors, keyed by example id.  Round trips are bit-exact, so training
    against these files matches on-line computation."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    taps = tuple(taps)
    index = {}
    for ex in corpus:
        with no_grad():
            ids = text_to_ids(ex.transcription, subwords)
            _, tap_map = mt.text.encode_with_taps(ids, taps)
        fname = f"targets_{ex.id}.zsc"
        save_checkpoint(out_dir / fname,
                        {f"tap_{l}": (t.data, True) for l, t in sorted(tap_map.items())})
        index[ex.id] = fname
    (out_dir / "index.json").write_text(
        json.dumps({str(k): v for k, v in sorted(index.items())}, sort_keys=True))
    return OfflineTargets(out_dir)


# ---- batching -----------------------------------------------------------

def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless epoch-shuffled index batches (ragged tail dropped)."""
    while True:
        perm = rng.permutation(n)
        for i in range(0, n - batch_size + 1, batch_size):
            yield perm[i:i + batch_size]


# ---- toy MT -------------------------------------------------------------

def _mt_example_ids(sample, subwords: SubwordVocab):
    src = text_to_ids(sample.transcription, subwords)
    tgt_in = [subwords.lang_id] + list(sample.translation_ids)
    tgt_out = list(sample.translation_ids) + [subwords.eos_id]
    return src, tgt_in, tgt_out


def mt_teacher_forced_accuracy(samples, mt: MtModel, subwords: SubwordVocab) -> float:
    """Fraction of next tokens predicted correctly under teacher forcing."""
    hits = 0
    total = 0
    with no_grad():
        for s in samples:
            src, tgt_in, tgt_out = _mt_example_ids(s, subwords)
            enc = mt.text.encode(src)
            logits = mt.decoder(tgt_in, enc)
            pred = np.argmax(logits.data, axis=1)
            hits += int(np.sum(pred == np.asarray(tgt_out)))
            total += len(tgt_out)
    return hits / max(1, total)


def train_toy_mt(train, valid, mt: MtModel, subwords: SubwordVocab,
                 cfg: TrainConfig) -> dict:
    """Train encoder, decoder and embedding jointly with label-smoothed
    cross entropy until held-out teacher-forced accuracy reaches the
    target (or the step budget runs out)."""
    params = mt.parameters()
    opt = AdamW(params, weight_decay=cfg.weight_decay)
    order = np.random.default_rng(cfg.seed)
    metrics: list[dict] = []
    val_rows: list[dict] = []
    stop_reason = "steps"
    batches = _batches(len(train), min(cfg.batch_size, len(train)), order)

    for step in range(1, cfg.steps + 1):
        lr = lr_schedule(step, cfg.base_lr, cfg.warmup_steps)
        idx = next(batches)
        loss_sum = 0.0
        for i in idx:
            src, tgt_in, tgt_out = _mt_example_ids(train[int(i)], subwords)
            enc = mt.text.encode(src)
            logits = mt.decoder(tgt_in, enc)
            loss = label_smoothed_ce(logits, tgt_out, cfg.label_smoothing)
            loss_sum += float(loss.data)
            loss.backward()
        for p in params:
            if p.tensor.grad is not None:
                p.tensor.grad /= len(idx)
        opt.step(lr)
        opt.zero_grad()
        metrics.append({"step": step, "lr": lr, "loss": loss_sum / len(idx)})

        if step % cfg.validate_every == 0 or step == cfg.steps:
            acc = mt_teacher_forced_accuracy(valid, mt, subwords)
            val_rows.append({"step": step, "teacher_forced_acc": acc})
            if acc >= cfg.mt_target_acc:
                stop_reason = "target_acc"
                break
    return {"metrics": metrics, "validation": val_rows, "stop_reason": stop_reason}


# ---- speech alignment ---------------------------------------------------

def _speech_labels(sample, cfg: TrainConfig, letters: LetterVocab,
                   subwords: SubwordVocab) -> CtcLabels:
    return build_ctc_labels(sample.transcription, cfg.label_mode, letters, subwords)


def validation_wasserstein(samples, stack: SpeechStack, mt: MtModel,
                           targets, ot_cfg: OtConfig, final_tap: int) -> float:
    """Mean final-layer OT distance to the text targets (the early-stop
    criterion).  Examples whose speech path fails are skipped."""
    vals = []
    with no_grad():
        for s in samples:
            try:
                _, _, tap_map = stack.encode_with_taps(s.frames, mt.shared, (final_tap,))
            except (compression.NoCharacters, compression.NoChunks):
                continue
            target = targets.get(s.id, s.transcription)[final_tap]
            w, _ = wasserstein_loss(tap_map[final_tap], Tensor(target), ot_cfg)
            vals.append(float(w.data))
    return float(np.mean(vals)) if vals else float("inf")


def train_speech_encoder(train, valid, stack: SpeechStack, mt: MtModel,
                         letters: LetterVocab, subwords: SubwordVocab,
                         targets, cfg: TrainConfig,
                         snapshot_dir=None) -> dict:
    """Align the speech stack to the frozen text branch.

    Per step: CTC loss on the frame posteriors plus OT losses between the
    tapped shared-encoder states of the speech path and the stored text
    taps, combined by ``total_loss``.  Examples whose target cannot fit
    in the available frames are skipped and counted.  Examples whose
    argmax path yields no usable chunks keep their (weighted) CTC term
    but drop the alignment terms for that step.
    Validation tracks the final-layer OT distance; training stops early
    after ``patience`` evaluations without improvement and the best
    parameters are restored.
    """
    for p in mt.parameters():
        if not p.frozen:
            raise ValueError("the MT model must be frozen during speech training")
    model_cfg = stack.cfg
    taps = ((model_cfg.shared_layers,) if cfg.no_aux_wass else tuple(model_cfg.taps))
    final_tap = model_cfg.shared_layers
    params = stack.parameters()
    opt = AdamW(params, weight_decay=cfg.weight_decay)
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    order = np.random.default_rng(seeds[0])
    mask_rng = np.random.default_rng(seeds[1])
    masking = cfg.mask_time_prob > 0.0 or cfg.mask_chan_prob > 0.0

    metrics: list[dict] = []
    val_rows: list[dict] = []
    snapshots: list[dict] = []
    best = {"val": float("inf"), "step": 0, "state": None}
    bad_evals = 0
    stop_reason = "steps"
    val_subset = valid if cfg.val_examples <= 0 else valid[:cfg.val_examples]
    batches = _batches(len(train), min(cfg.batch_size, len(train)), order)

    if snapshot_dir is not None:
        snapshot_dir = Path(snapshot_dir)
        snapshot_dir.mkdir(parents=True, exist_ok=True)

    # baseline before any update, so convergence can be measured against it
    val0 = validation_wasserstein(val_subset, stack, mt, targets, cfg.ot, final_tap)
    val_rows.append({"step": 0, "val_wass": val0})

    for step in range(1, cfg.steps + 1):
        lr = lr_schedule(step, cfg.base_lr, cfg.warmup_steps)
        idx = next(batches)
        used = 0
        skipped = 0
        ctc_sum = 0.0
        wass_sum = {l: 0.0 for l in taps}
        total_sum = 0.0
        ctc_only = 0
        for i in idx:
            sample = train[int(i)]
            frames = sample.frames
            if masking:
                frames = mask_speech(frames, cfg.mask_time_prob, cfg.mask_time_len,
                                     cfg.mask_chan_prob, cfg.mask_chan_len, mask_rng)
            labels = _speech_labels(sample, cfg, letters, subwords)
            a, lp = stack.forward_frames(frames)
            ctc_term, feasible = ctc_loss(lp, labels)
            if not feasible:
                skipped += 1
                continue
            # the adapter needs a usable argmax path; until CTC training
            # leaves its early all-blank phase it may have none.  Keeping
            # the CTC gradient in that phase is what breaks the cycle, so
            # only the alignment term is dropped.
            try:
                fwd = stack.adapt_frames(a, lp)
                _, tap_map = mt.shared.forward_with_taps(fwd.embedded, taps)
            except (compression.NoCharacters, compression.NoChunks):
                scaled = ad.mul(ctc_term, cfg.alpha)
                scaled.backward()
                ctc_only += 1
                used += 1
                ctc_sum += float(ctc_term.data)
                total_sum += float(scaled.data)
                continue
            text_taps = targets.get(sample.id, sample.transcription)
            text_taps = {l: text_taps[l] for l in taps}
            loss, report = total_loss(tap_map, text_taps, ctc_term,
                                      cfg.alpha, cfg.ot)
            loss.backward()
            used += 1
            ctc_sum += report["ctc"]
            total_sum += report["total"]
            for l in taps:
                wass_sum[l] += report["wass"][l]
        if used:
            for p in params:
                if p.tensor.grad is not None:
                    p.tensor.grad /= used
            opt.step(lr)
        opt.zero_grad()
        metrics.append({
            "step": step,
            "lr": lr,
            "loss_total": total_sum / used if used else None,
            "loss_ctc": ctc_sum / used if used else None,
            "loss_wass_per_layer": {str(l): wass_sum[l] / (used - ctc_only)
                                    if used > ctc_only else None
                                    for l in taps},
            "skipped_infeasible": skipped,
            "ctc_only": ctc_only,
        })

        if step % cfg.validate_every == 0 or step == cfg.steps:
            val = validation_wasserstein(val_subset, stack, mt, targets,
                                         cfg.ot, final_tap)
            val_rows.append({"step": step, "val_wass": val})
            state = {p.name: (p.data.copy(), p.frozen) for p in params}
            if snapshot_dir is not None:
                path = snapshot_dir / f"ckpt_step{step}.zsc"
                save_checkpoint(path, state)
                snapshots.append({"step": step, "val_wass": val, "path": str(path)})
            if val < best["val"]:
                best = {"val": val, "step": step, "state": state}
                bad_evals = 0
            else:
                bad_evals += 1
                if bad_evals >= cfg.patience:
                    stop_reason = "early_stop"
                    break

    if best["state"] is not None:
        for p in params:
            p.data = best["state"][p.name][0].copy()
    return {"metrics": metrics, "validation": val_rows, "snapshots": snapshots,
            "best_step": best["step"], "best_val": best["val"],
            "stop_reason": stop_reason}


# ---- checkpoint averaging -----------------------------------------------

def average_checkpoints(paths, k: int | None = None,
                        scores=None) -> dict[str, tuple[np.ndarray, bool]]:
    """Average checkpoints name-by-name (alignment is by name, not file
    order).  With ``scores`` given, the k lowest-scoring checkpoints are
    chosen; otherwise the first k paths.  Manifests must agree exactly.
    """
    paths = list(paths)
    if scores is not None:
        if len(scores) != len(paths):
            raise ValueError("scores and paths differ in length")
        ranked = sorted(range(len(paths)), key=lambda i: (scores[i], i))
        paths = [paths[i] for i in ranked]
    if k is not None:
        paths = paths[:k]
    if not paths:
        raise ValueError("no checkpoints to average")
    first = load_checkpoint(paths[0])
    sums = {name: arr.copy() for name, (arr, _) in first.items()}
    flags = {name: frozen for name, (_, frozen) in first.items()}
    for p in paths[1:]:
        other = load_checkpoint(p)
        if set(other) != set(sums):
            raise ManifestMismatch(f"{p}: parameter names differ")
        for name, (arr, frozen) in other.items():
            if arr.shape != sums[name].shape or frozen != flags[name]:
                raise ManifestMismatch(f"{p}: manifest entry {name!r} differs")
            sums[name] += arr
    n = len(paths)
    return {name: (sums[name] / n, flags[name]) for name in first}
