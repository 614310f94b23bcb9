"""Synthetic paired speech / text / translation corpus.

Sentences are drawn from a closed lexicon of concatenated subword units.
Each character of the CTC label stream emits a fixed per-symbol base
vector repeated for a sampled number of steps, plus Gaussian noise;
silence (blank-aligned) steps separate words and pad the boundaries.
Frames are produced at r raw frames per label step, so the recorded
alignment lives at the acoustic-encoder output rate and its CTC collapse
equals the subword_unk labels exactly.

The translation of a sentence is a deterministic word-level cipher
followed by word-order reversal; sentence-final punctuation stays final.
"""
from __future__ import annotations

import base64
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ctc import collapse
from .vocab import (LetterVocab, SubwordVocab, build_ctc_labels,
                    tokenize_subwords, tokenize_words)

__all__ = [
    "GeneratorSpec", "SyntheticExample", "SpeechSample", "MtSample",
    "gen_corpus", "split_corpus", "save_corpus", "load_corpus",
    "speech_view", "mt_view", "oracle_log_probs", "BadFractions",
    "DEFAULT_INITIAL_UNITS", "DEFAULT_CONTINUATION_UNITS",
    "DEFAULT_ALPHABET",
]

DEFAULT_ALPHABET = "ACDEIMNORSTU"
# The unit inventory is split by role, the way real subword vocabularies
# mark word-initial pieces: a word is one initial unit plus optional
# continuation units.  Since no continuation can start a word, a flat
# token stream segments into words in exactly one way -- without this the
# reversed-word translation target would be ambiguous.
DEFAULT_INITIAL_UNITS = ("RAND", "SENT", "DO", "MI", "SO", "TA",
                         "RO", "UN", "CON", "ME", "DA", "TU")
DEFAULT_CONTINUATION_UNITS = ("OM", "ENCE", "RE", "NA", "CE",
                              "AN", "IS", "OR", "AD", "IT")
PERIOD = "."


class BadFractions(Exception):
    """Split fractions must be non-negative and sum to one."""


@dataclass(frozen=True)
class GeneratorSpec:
    """Everything the corpus generator needs, fixed up front."""

    alphabet: str = DEFAULT_ALPHABET
    initial_units: tuple[str, ...] = DEFAULT_INITIAL_UNITS
    continuation_units: tuple[str, ...] = DEFAULT_CONTINUATION_UNITS
    lexicon_size: int = 24
    words_per_sentence: tuple[int, int] = (2, 3)
    char_repeats: tuple[int, int] = (1, 2)
    silence_frames: tuple[int, int] = (0, 2)
    noise_sigma: float = 0.05
    translation_seed: int = 13
    period_prob: float = 0.3
    feat_dim: int = 8
    downsample: int = 4

    def __post_init__(self):
        if self.alphabet != self.alphabet.upper():
            raise ValueError("alphabet must be uppercase")
        if len(set(self.alphabet)) != len(self.alphabet):
            raise ValueError("alphabet has duplicate characters")
        for lo, hi, what in ((*self.char_repeats, "char_repeats"),
                             (*self.words_per_sentence, "words_per_sentence")):
            if lo < 1 or hi < lo:
                raise ValueError(f"bad range for {what}")
        if self.silence_frames[0] < 0 or self.silence_frames[1] < self.silence_frames[0]:
            raise ValueError("bad silence range")
        if self.noise_sigma < 0.0:
            raise ValueError("noise sigma must be >= 0")
        units = self.initial_units + self.continuation_units
        if len(set(units)) != len(units):
            raise ValueError("unit inventories overlap or repeat")
        for sw in units:
            if not set(sw) <= set(self.alphabet):
                raise ValueError(f"unit {sw!r} uses characters outside the alphabet")

    @property
    def units(self) -> tuple[str, ...]:
        return self.initial_units + self.continuation_units

    # -- derived vocabularies (deterministic in the spec) -----------------

    def letter_vocab(self) -> LetterVocab:
        return LetterVocab.build(tuple(self.alphabet))

    def subword_vocab(self) -> SubwordVocab:
        return SubwordVocab.build(tuple(self.alphabet),
                                  self.units + (PERIOD,))

    def lexicon(self) -> tuple[str, ...]:
        """Closed word list, deterministic in the translation seed.  Each
        word is one initial unit plus up to two continuation units, and
        greedy tokenization must recover exactly that construction (a
        candidate whose pieces merge differently is resampled)."""
        rng = np.random.default_rng(self.translation_seed)
        vocab = self.subword_vocab()
        words: list[str] = []
        seen = set()
        guard = 0
        while len(words) < self.lexicon_size:
            guard += 1
            if guard > 10000:
                raise ValueError("cannot build an unambiguous lexicon "
                                 "from these units")
            k = int(rng.integers(1, 4))
            first = self.initial_units[int(rng.integers(len(self.initial_units)))]
            rest = [self.continuation_units[int(i)]
                    for i in rng.integers(0, len(self.continuation_units),
                                          size=k - 1)]
            parts = [first] + rest
            w = "".join(parts)
            if w in seen:
                continue
            tokens = [vocab.surface(t) for t in tokenize_subwords(w, vocab)]
            if tokens != parts:
                continue
            seen.add(w)
            words.append(w)
        return tuple(words)

    def cipher(self) -> dict[str, str]:
        """Deterministic bijection on the lexicon (the toy translation)."""
        lex = self.lexicon()
        rng = np.random.default_rng(self.translation_seed + 1)
        perm = rng.permutation(len(lex))
        return {lex[i]: lex[int(perm[i])] for i in range(len(lex))}

    def base_vectors(self) -> np.ndarray:
        """(|V|, feat_dim) fixed per-symbol sound prototypes; the blank
        row is silence (zeros)."""
        v = self.letter_vocab()
        rng = np.random.default_rng(self.translation_seed + 2)
        bases = rng.normal(0.0, 1.0, size=(len(v), self.feat_dim))
        bases[v.blank_id] = 0.0
        return bases


@dataclass
class SyntheticExample:
    id: int
    transcription: str
    translation_ids: tuple[int, ...]
    frames: np.ndarray              # (l, feat_dim) float64
    alignment: tuple[int, ...]      # one letter-vocab id per r raw frames


@dataclass
class SpeechSample:
    """What the speech trainer may see: no translation."""

    id: int
    frames: np.ndarray
    transcription: str


@dataclass
class MtSample:
    """What the MT trainer may see: no audio."""

    id: int
    transcription: str
    translation_ids: tuple[int, ...]


def speech_view(corpus) -> list[SpeechSample]:
    return [SpeechSample(ex.id, ex.frames, ex.transcription) for ex in corpus]


def mt_view(corpus) -> list[MtSample]:
    return [MtSample(ex.id, ex.transcription, ex.translation_ids) for ex in corpus]


# ---- generation ---------------------------------------------------------

def _sentence_units(spec: GeneratorSpec, transcription: str,
                    letters: LetterVocab, subwords: SubwordVocab) -> list[list[int]]:
    """subword_unk label ids grouped per word (a unit per character slot
    plus one separator per subword)."""
    out: list[list[int]] = []
    for group in tokenize_words(transcription, subwords):
        word_units: list[int] = []
        for tok in group:
            surf = subwords.surface(tok)
            word_units.extend(letters.id_of(c) if c in letters else letters.unk_id
                              for c in surf)
            word_units.append(letters.sep_id)
        out.append(word_units)
    return out


def _emit_alignment(spec: GeneratorSpec, per_word: list[list[int]],
                    rng: np.random.Generator, letters: LetterVocab) -> list[int]:
    """Label-step sequence whose CTC collapse is exactly the flat labels."""
    lo_s, hi_s = spec.silence_frames
    lo_r, hi_r = spec.char_repeats
    steps: list[int] = []

    def silence():
        steps.extend([letters.blank_id] * int(rng.integers(lo_s, hi_s + 1)))

    silence()
    prev = letters.blank_id
    for w, word_units in enumerate(per_word):
        if w > 0:
            silence()
        for unit in word_units:
            if unit == prev and (not steps or steps[-1] != letters.blank_id):
                steps.append(letters.blank_id)  # keep equal neighbours separate
            steps.extend([unit] * int(rng.integers(lo_r, hi_r + 1)))
            prev = unit
    silence()
    return steps


def _emit_frames(spec: GeneratorSpec, alignment: list[int],
                 bases: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    r = spec.downsample
    proto = bases[alignment]                            # (n_out, f)
    raw = np.repeat(proto, r, axis=0)
    if spec.noise_sigma > 0.0:
        raw = raw + rng.normal(0.0, spec.noise_sigma, size=raw.shape)
    return raw


def gen_corpus(spec: GeneratorSpec, size: int, seed: int) -> list[SyntheticExample]:
    letters = spec.letter_vocab()
    subwords = spec.subword_vocab()
    lexicon = spec.lexicon()
    cipher = spec.cipher()
    bases = spec.base_vectors()
    rng = np.random.default_rng(seed)

    out: list[SyntheticExample] = []
    seen: set[str] = set()
    for idx in range(size):
        lo_w, hi_w = spec.words_per_sentence
        # resample duplicate sentences so retrieval over a corpus is
        # well-posed (identical transcriptions would tie); the sentence
        # space is far larger than any corpus we generate
        for _ in range(1000):
            n_words = int(rng.integers(lo_w, hi_w + 1))
            words = [lexicon[int(i)]
                     for i in rng.integers(0, len(lexicon), size=n_words)]
            period = rng.random() < spec.period_prob
            surface = words[:]
            if period:
                surface[-1] = surface[-1] + PERIOD
            transcription = " ".join(surface)
            if transcription not in seen:
                break
        else:
            raise ValueError("could not draw a fresh sentence; corpus too "
                             "large for the sentence space")
        seen.add(transcription)

        target_words = [cipher[w] for w in reversed(words)]
        target = " ".join(target_words) + (PERIOD if period else "")
        translation_ids = tuple(tokenize_subwords(target, subwords))

        per_word = _sentence_units(spec, transcription, letters, subwords)
        alignment = _emit_alignment(spec, per_word, rng, letters)
        frames = _emit_frames(spec, alignment, bases, rng)

        flat = [u for w in per_word for u in w]
        labels = build_ctc_labels(transcription, "subword_unk", letters, subwords)
        assert tuple(flat) == labels.ids, "generator/label construction diverged"
        assert tuple(collapse(alignment)) == labels.ids, \
            "alignment collapse must reproduce the subword_unk labels"

        out.append(SyntheticExample(idx, transcription, translation_ids,
                                    frames, tuple(alignment)))
    return out


def oracle_log_probs(alignment, vocab_size: int, margin: float = 20.0) -> np.ndarray:
    """Near-one-hot frame posteriors for an oracle alignment: the argmax
    path equals the alignment by a wide margin."""
    alignment = np.asarray(alignment, dtype=np.intp)
    logits = np.zeros((alignment.size, vocab_size))
    logits[np.arange(alignment.size), alignment] = margin
    return logits - np.logaddexp.reduce(logits, axis=1, keepdims=True)


# ---- splits -------------------------------------------------------------

def split_corpus(corpus, fractions, seed: int) -> list[list[SyntheticExample]]:
    """Shuffle and split into disjoint parts with largest-remainder
    rounding, so part sizes match the fractions to within one."""
    fr = [float(f) for f in fractions]
    if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise BadFractions(f"fractions must be >= 0 and sum to 1, got {fr}")
    n = len(corpus)
    perm = np.random.default_rng(seed).permutation(n)
    exact = [f * n for f in fr]
    counts = [int(np.floor(e)) for e in exact]
    rema = sorted(range(len(fr)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in range(n - sum(counts)):
        counts[rema[i % len(fr)]] += 1
    parts: list[list[SyntheticExample]] = []
    off = 0
    for c in counts:
        parts.append([corpus[int(i)] for i in perm[off:off + c]])
        off += c
    return parts


# ---- container ----------------------------------------------------------

def _spec_to_dict(spec: GeneratorSpec) -> dict:
    return {f.name: list(v) if isinstance(v := getattr(spec, f.name), tuple)
            else v
            for f in dataclasses.fields(spec)}


def spec_from_dict(d: dict) -> GeneratorSpec:
    kwargs = {f.name: tuple(v) if isinstance(v := d[f.name], list) else v
              for f in dataclasses.fields(GeneratorSpec)}
    return GeneratorSpec(**kwargs)


def save_corpus(path, spec: GeneratorSpec, corpus) -> None:
    """JSON-lines: a schema header, then one example per line with frames
    as base64 little-endian float64."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema_version": 1,
                             "generator": _spec_to_dict(spec)},
                            sort_keys=True) + "\n")
        for ex in corpus:
            frames = np.ascontiguousarray(ex.frames, dtype="<f8")
            fh.write(json.dumps({
                "id": ex.id,
                "transcription": ex.transcription,
                "translation_ids": list(ex.translation_ids),
                "alignment": list(ex.alignment),
                "frames_shape": list(frames.shape),
                "frames": base64.b64encode(frames.tobytes()).decode("ascii"),
            }, sort_keys=True) + "\n")


def load_corpus(path) -> tuple[GeneratorSpec, list[SyntheticExample]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    if header.get("schema_version") != 1:
        raise ValueError(f"{path}: unsupported corpus schema")
    spec = spec_from_dict(header["generator"])
    out = []
    for line in lines[1:]:
        d = json.loads(line)
        frames = np.frombuffer(base64.b64decode(d["frames"]), dtype="<f8")
        frames = frames.reshape(d["frames_shape"]).astype(np.float64)
        out.append(SyntheticExample(int(d["id"]), d["transcription"],
                                    tuple(d["translation_ids"]),
                                    frames, tuple(d["alignment"])))
    return spec, out
