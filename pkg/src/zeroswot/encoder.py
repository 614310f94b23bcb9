"""Pre-layernorm transformer encoders, decoder, and embedding front-ends.

All stacks are pre-LN with a final layernorm on top.  Intermediate
representations handed to alignment losses are captured after the first
layernorm of the next layer, so everything downstream of a tap is
post-layernorm; the final tap is the encoder output itself.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

__all__ = [
    "ModelConfig", "sinusoidal_pos", "Linear", "MultiHeadAttention",
    "FeedForward", "EncoderLayer", "TransformerEncoder", "TextBranch",
    "AcousticEncoder", "SpeechEmbedder", "Decoder",
    "UnknownTokenId", "InputTooShort", "EmptyCompressedInput",
]


class UnknownTokenId(Exception):
    """A token id is outside the embedding table."""


class InputTooShort(Exception):
    """Fewer raw frames than one downsampling window."""


class EmptyCompressedInput(Exception):
    """The speech embedder received zero compressed states."""


@dataclass(frozen=True)
class ModelConfig:
    """Desk-scale architecture knobs shared by every stage."""

    d: int = 32
    heads: int = 4
    ff_dim: int = 64
    acoustic_layers: int = 2
    shared_layers: int = 4
    decoder_layers: int = 2
    subword_enc_layers: int = 3
    downsample: int = 4          # r: raw frames per acoustic output step
    feat_dim: int = 8            # raw frame width
    taps: tuple[int, ...] = (2, 3, 4)

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError("d must divide evenly into heads")
        if self.downsample < 1:
            raise ValueError("downsample must be >= 1")
        if not self.taps or any(t < 1 or t > self.shared_layers for t in self.taps):
            raise ValueError("taps must lie in 1..shared_layers")
        if self.shared_layers not in self.taps:
            raise ValueError("the final layer must be tapped")


def sinusoidal_pos(length: int, d: int) -> np.ndarray:
    """Fixed sin/cos positional table, position 0 in row 0."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(0, d, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, idx / d)
    table = np.zeros((length, d))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : table[:, 1::2].shape[1]])
    return table


def _xavier(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


class Linear:
    def __init__(self, name: str, rng: np.random.Generator, d_in: int,
                 d_out: int, bias: bool = True):
        self.w = Parameter(f"{name}.w", _xavier(rng, d_in, d_out))
        self.b = Parameter(f"{name}.b", np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.w.tensor)
        return ad.add(y, self.b.tensor) if self.b is not None else y

    def parameters(self) -> list[Parameter]:
        return [self.w] + ([self.b] if self.b is not None else [])


class LayerNorm:
    def __init__(self, name: str, rng, d: int):
        self.gamma = Parameter(f"{name}.g", np.ones(d))
        self.beta = Parameter(f"{name}.b", np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma.tensor, self.beta.tensor)

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]


class MultiHeadAttention:
    def __init__(self, name: str, rng, d: int, heads: int):
        self.heads = heads
        self.dh = d // heads
        self.wq = Linear(f"{name}.q", rng, d, d)
        self.wk = Linear(f"{name}.k", rng, d, d)
        self.wv = Linear(f"{name}.v", rng, d, d)
        self.wo = Linear(f"{name}.o", rng, d, d)

    def __call__(self, x_q: Tensor, x_kv: Tensor, mask: np.ndarray | None = None) -> Tensor:
        tq = x_q.shape[0]
        tk = x_kv.shape[0]
        h, dh = self.heads, self.dh

        def split(t: Tensor, length: int) -> Tensor:
            return ad.permute(ad.reshape(t, (length, h, dh)), (1, 0, 2))

        q = split(self.wq(x_q), tq)                     # (h, tq, dh)
        k = split(self.wk(x_kv), tk)
        v = split(self.wv(x_kv), tk)
        scores = ad.mul(ad.matmul(q, ad.permute(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
        if mask is not None:
            scores = ad.add(scores, Tensor(mask))       # additive, -inf blocks
        att = ad.softmax(scores, axis=-1)
        ctx = ad.matmul(att, v)                         # (h, tq, dh)
        merged = ad.reshape(ad.permute(ctx, (1, 0, 2)), (tq, h * dh))
        return self.wo(merged)

    def parameters(self) -> list[Parameter]:
        return (self.wq.parameters() + self.wk.parameters()
                + self.wv.parameters() + self.wo.parameters())


class FeedForward:
    def __init__(self, name: str, rng, d: int, ff_dim: int, activation: str):
        self.lin1 = Linear(f"{name}.1", rng, d, ff_dim)
        self.lin2 = Linear(f"{name}.2", rng, ff_dim, d)
        self.act = ad.relu if activation == "relu" else ad.gelu

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(self.act(self.lin1(x)))

    def parameters(self) -> list[Parameter]:
        return self.lin1.parameters() + self.lin2.parameters()


class EncoderLayer:
    """Pre-LN block: x += attn(LN1 x); x += ffn(LN2 x)."""

    def __init__(self, name: str, rng, d: int, heads: int, ff_dim: int,
                 activation: str):
        self.ln1 = LayerNorm(f"{name}.ln1", rng, d)
        self.attn = MultiHeadAttention(f"{name}.attn", rng, d, heads)
        self.ln2 = LayerNorm(f"{name}.ln2", rng, d)
        self.ffn = FeedForward(f"{name}.ffn", rng, d, ff_dim, activation)

    def normed_input(self, x: Tensor) -> Tensor:
        return self.ln1(x)

    def forward_from_normed(self, x: Tensor, normed: Tensor) -> Tensor:
        x = ad.add(x, self.attn(normed, normed))
        return ad.add(x, self.ffn(self.ln2(x)))

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward_from_normed(x, self.normed_input(x))

    def parameters(self) -> list[Parameter]:
        return (self.ln1.parameters() + self.attn.parameters()
                + self.ln2.parameters() + self.ffn.parameters())


class TransformerEncoder:
    """A stack of pre-LN layers with a final layernorm on top."""

    def __init__(self, name: str, rng, layers: int, d: int, heads: int,
                 ff_dim: int, activation: str = "relu"):
        self.layers = [EncoderLayer(f"{name}.l{i}", rng, d, heads, ff_dim, activation)
                       for i in range(1, layers + 1)]
        self.final_ln = LayerNorm(f"{name}.ln_f", rng, d)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return self.final_ln(x)

    def forward_with_taps(self, x: Tensor, taps) -> tuple[Tensor, dict[int, Tensor]]:
        """Returns the final output and {layer index: tap}.  The tap for
        layer l < L is the first layernorm of layer l+1 applied to h_l;
        the tap for layer L is the final output itself."""
        taps = set(taps)
        out: dict[int, Tensor] = {}
        for i, layer in enumerate(self.layers, start=1):
            normed = layer.normed_input(x)
            if i - 1 in taps:
                out[i - 1] = normed
            x = layer.forward_from_normed(x, normed)
        x = self.final_ln(x)
        if len(self.layers) in taps:
            out[len(self.layers)] = x
        return x, out

    def parameters(self) -> list[Parameter]:
        ps: list[Parameter] = []
        for layer in self.layers:
            ps.extend(layer.parameters())
        ps.extend(self.final_ln.parameters())
        return ps


class TextBranch:
    """Token embedding plus the shared encoder (embeddings scaled by
    sqrt(d), fixed sinusoidal positions)."""

    def __init__(self, embedding: Parameter, encoder: TransformerEncoder, d: int):
        self.embedding = embedding
        self.encoder = encoder
        self.d = d

    def embed(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.intp)
        vocab_size = self.embedding.data.shape[0]
        if ids.size == 0:
            raise UnknownTokenId("empty id sequence")
        if ids.min() < 0 or ids.max() >= vocab_size:
            raise UnknownTokenId(f"token id outside 0..{vocab_size - 1}")
        e = ad.mul(ad.gather_rows(self.embedding.tensor, ids), np.sqrt(self.d))
        return ad.add(e, Tensor(sinusoidal_pos(len(ids), self.d)))

    def encode(self, ids) -> Tensor:
        return self.encoder(self.embed(ids))

    def encode_with_taps(self, ids, taps) -> tuple[Tensor, dict[int, Tensor]]:
        return self.encoder.forward_with_taps(self.embed(ids), taps)


class AcousticEncoder:
    """One strided convolution (stride = kernel = r, zero same-padding so
    n = ceil(l / r)) projecting raw frames to width d, followed by a small
    pre-LN transformer."""

    def __init__(self, name: str, rng, cfg: ModelConfig):
        self.cfg = cfg
        r, f, d = cfg.downsample, cfg.feat_dim, cfg.d
        self.conv = Linear(f"{name}.conv", rng, r * f, d)
        self.proj = Linear(f"{name}.proj", rng, d, d)
        self.stack = TransformerEncoder(name, rng, cfg.acoustic_layers, d,
                                        cfg.heads, cfg.ff_dim, activation="gelu")

    def __call__(self, frames: np.ndarray) -> Tensor:
        frames = np.asarray(frames, dtype=np.float64)
        r, f, d = self.cfg.downsample, self.cfg.feat_dim, self.cfg.d
        if frames.ndim != 2 or frames.shape[1] != f:
            raise ValueError(f"frames must be (l, {f}), got {frames.shape}")
        length = frames.shape[0]
        if length < 1:
            raise InputTooShort("no frames")
        n = -(-length // r)
        padded = np.zeros((n * r, f))
        padded[:length] = frames
        windows = Tensor(padded.reshape(n, r * f))
        x = self.proj(ad.gelu(self.conv(windows)))
        x = ad.add(x, Tensor(sinusoidal_pos(n, d)))
        return self.stack(x)

    def output_length(self, n_raw: int) -> int:
        return -(-n_raw // self.cfg.downsample)

    def parameters(self) -> list[Parameter]:
        return self.conv.parameters() + self.proj.parameters() + self.stack.parameters()


class SpeechEmbedder:
    """Wraps compressed speech states with frozen copies of the <lang> and
    </s> text-embedding rows, then applies the same scale-and-position
    treatment the text front-end uses (positions restart at 0)."""

    def __init__(self, name: str, embedding: Parameter, lang_id: int,
                 eos_id: int, d: int):
        self.eps_lang = Parameter(f"{name}.eps_lang",
                                  embedding.data[lang_id:lang_id + 1].copy(),
                                  frozen=True)
        self.eps_eos = Parameter(f"{name}.eps_eos",
                                 embedding.data[eos_id:eos_id + 1].copy(),
                                 frozen=True)
        self.d = d

    def __call__(self, a_sw: Tensor, skip_specials: bool = False) -> Tensor:
        if a_sw.shape[0] == 0:
            raise EmptyCompressedInput("no compressed states to embed")
        if skip_specials:
            rows = a_sw
        else:
            rows = ad.concat([self.eps_lang.tensor, a_sw, self.eps_eos.tensor], axis=0)
        e = ad.mul(rows, np.sqrt(self.d))
        return ad.add(e, Tensor(sinusoidal_pos(rows.shape[0], self.d)))

    def parameters(self) -> list[Parameter]:
        return [self.eps_lang, self.eps_eos]


def causal_mask(t: int) -> np.ndarray:
    m = np.full((t, t), -np.inf)
    return np.triu(m, k=1)


class DecoderLayer:
    """Pre-LN decoder block: causal self-attention, cross-attention over
    the encoder output, feed-forward."""

    def __init__(self, name: str, rng, d: int, heads: int, ff_dim: int):
        self.ln1 = LayerNorm(f"{name}.ln1", rng, d)
        self.self_attn = MultiHeadAttention(f"{name}.self", rng, d, heads)
        self.ln2 = LayerNorm(f"{name}.ln2", rng, d)
        self.cross_attn = MultiHeadAttention(f"{name}.cross", rng, d, heads)
        self.ln3 = LayerNorm(f"{name}.ln3", rng, d)
        self.ffn = FeedForward(f"{name}.ffn", rng, d, ff_dim, "relu")

    def __call__(self, x: Tensor, enc_out: Tensor, mask: np.ndarray) -> Tensor:
        n = self.ln1(x)
        x = ad.add(x, self.self_attn(n, n, mask))
        x = ad.add(x, self.cross_attn(self.ln2(x), enc_out))
        return ad.add(x, self.ffn(self.ln3(x)))

    def parameters(self) -> list[Parameter]:
        return (self.ln1.parameters() + self.self_attn.parameters()
                + self.ln2.parameters() + self.cross_attn.parameters()
                + self.ln3.parameters() + self.ffn.parameters())


class Decoder:
    """Autoregressive transformer decoder; the input embedding is shared
    with the text branch and the output projection is tied to it."""

    def __init__(self, name: str, rng, embedding: Parameter, cfg: ModelConfig):
        self.embedding = embedding
        self.d = cfg.d
        self.layers = [DecoderLayer(f"{name}.l{i}", rng, cfg.d, cfg.heads, cfg.ff_dim)
                       for i in range(1, cfg.decoder_layers + 1)]
        self.final_ln = LayerNorm(f"{name}.ln_f", rng, cfg.d)

    def __call__(self, ids, enc_out: Tensor) -> Tensor:
        """Teacher-forced logits (len(ids), |B|) over the next token."""
        ids = np.asarray(ids, dtype=np.intp)
        vocab_size = self.embedding.data.shape[0]
        if ids.size == 0 or ids.min() < 0 or ids.max() >= vocab_size:
            raise UnknownTokenId("decoder ids outside the embedding table")
        x = ad.mul(ad.gather_rows(self.embedding.tensor, ids), np.sqrt(self.d))
        x = ad.add(x, Tensor(sinusoidal_pos(len(ids), self.d)))
        mask = causal_mask(len(ids))
        for layer in self.layers:
            x = layer(x, enc_out, mask)
        x = self.final_ln(x)
        return ad.matmul(x, ad.transpose(self.embedding.tensor))

    def parameters(self) -> list[Parameter]:
        ps: list[Parameter] = []
        for layer in self.layers:
            ps.extend(layer.parameters())
        ps.extend(self.final_ln.parameters())
        return ps
