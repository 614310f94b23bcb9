"""Model bundles: the toy MT model and the speech encoder stack.

The MT bundle owns the shared token embedding, the shared (semantic)
encoder and the decoder.  The speech stack owns everything trained in the
alignment stage: acoustic encoder, CTC head, compression adapter and the
speech embedder's frozen special-token rows.  Splicing the speech stack
in front of the frozen shared encoder yields the zero-shot path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import compression, ctc
from .autodiff import Parameter, Tensor
from .checkpoint import restore_parameters
from .ctc import FrameLogProbs
from .encoder import (AcousticEncoder, Decoder, Linear, ModelConfig,
                      SpeechEmbedder, TextBranch, TransformerEncoder)

__all__ = ["MtModel", "SpeechStack", "SpeechForward", "build_mt_model",
           "build_speech_stack", "load_mt_model", "load_speech_stack"]


class MtModel:
    def __init__(self, cfg: ModelConfig, vocab_size: int, rng: np.random.Generator):
        self.cfg = cfg
        self.embedding = Parameter(
            "emb", rng.normal(0.0, 1.0 / np.sqrt(cfg.d), size=(vocab_size, cfg.d)))
        self.shared = TransformerEncoder("shared", rng, cfg.shared_layers,
                                         cfg.d, cfg.heads, cfg.ff_dim,
                                         activation="relu")
        self.decoder = Decoder("dec", rng, self.embedding, cfg)
        self.text = TextBranch(self.embedding, self.shared, cfg.d)

    def parameters(self) -> list[Parameter]:
        return [self.embedding] + self.shared.parameters() + self.decoder.parameters()

    def freeze(self) -> None:
        for p in self.parameters():
            p.freeze()


def build_mt_model(cfg: ModelConfig, vocab_size: int, seed: int) -> MtModel:
    return MtModel(cfg, vocab_size, np.random.default_rng(seed))


@dataclass
class SpeechForward:
    acoustic: Tensor               # (n, d)
    log_probs: FrameLogProbs       # (n, |V|)
    compressed: Tensor             # (n_sw, d) adapter output
    embedded: Tensor               # (n', d) ready for the shared encoder


class SpeechStack:
    def __init__(self, cfg: ModelConfig, letter_vocab_size: int,
                 embedding: Parameter, lang_id: int, eos_id: int,
                 rng: np.random.Generator, adapter_mode: str = "subword",
                 include_separator: bool = False, skip_specials: bool = False):
        if adapter_mode not in compression.ADAPTER_MODES:
            raise ValueError(f"unknown adapter mode {adapter_mode!r}")
        self.cfg = cfg
        self.adapter_mode = adapter_mode
        self.include_separator = include_separator
        self.skip_specials = skip_specials
        self.acoustic = AcousticEncoder("acoustic", rng, cfg)
        self.ctc_head = Linear("ctc", rng, cfg.d, letter_vocab_size)
        self.subword_enc = (compression.SubwordEncoder("subenc", rng, cfg)
                            if adapter_mode == "subword" else None)
        self.embedder = SpeechEmbedder("embedder", embedding, lang_id, eos_id, cfg.d)

    def forward_frames(self, frames: np.ndarray):
        """Acoustic states and frame posteriors only.

        This half never fails, so a CTC loss can still be applied when
        the adapter below cannot form chunks yet.
        """
        a = self.acoustic(frames)
        lp = ctc.ctc_head(a, self.ctc_head.w, self.ctc_head.b)
        return a, lp

    def adapt_frames(self, a, lp) -> SpeechForward:
        rep = compression.adapt(a, lp, self.adapter_mode,
                                subword_enc=self.subword_enc,
                                include_separator=self.include_separator)
        embedded = self.embedder(rep.reprs, skip_specials=self.skip_specials)
        return SpeechForward(a, lp, rep.reprs, embedded)

    def forward(self, frames: np.ndarray) -> SpeechForward:
        a, lp = self.forward_frames(frames)
        return self.adapt_frames(a, lp)

    def encode_with_taps(self, frames: np.ndarray, shared: TransformerEncoder,
                         taps) -> tuple[SpeechForward, Tensor, dict[int, Tensor]]:
        fwd = self.forward(frames)
        out, tap_map = shared.forward_with_taps(fwd.embedded, taps)
        return fwd, out, tap_map

    def parameters(self) -> list[Parameter]:
        ps = self.acoustic.parameters() + self.ctc_head.parameters()
        if self.subword_enc is not None:
            ps = ps + self.subword_enc.parameters()
        return ps + self.embedder.parameters()


def build_speech_stack(cfg: ModelConfig, letter_vocab_size: int, mt: MtModel,
                       lang_id: int, eos_id: int, seed: int,
                       adapter_mode: str = "subword",
                       include_separator: bool = False,
                       skip_specials: bool = False) -> SpeechStack:
    return SpeechStack(cfg, letter_vocab_size, mt.embedding, lang_id, eos_id,
                       np.random.default_rng(seed), adapter_mode=adapter_mode,
                       include_separator=include_separator,
                       skip_specials=skip_specials)


def load_mt_model(cfg: ModelConfig, vocab_size: int, path) -> MtModel:
    model = build_mt_model(cfg, vocab_size, seed=0)
    restore_parameters(model.parameters(), path)
    return model


def load_speech_stack(cfg: ModelConfig, letter_vocab_size: int, mt: MtModel,
                      lang_id: int, eos_id: int, path,
                      adapter_mode: str = "subword",
                      include_separator: bool = False,
                      skip_specials: bool = False) -> SpeechStack:
    stack = build_speech_stack(cfg, letter_vocab_size, mt, lang_id, eos_id,
                               seed=0, adapter_mode=adapter_mode,
                               include_separator=include_separator,
                               skip_specials=skip_specials)
    restore_parameters(stack.parameters(), path)
    return stack
