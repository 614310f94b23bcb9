"""Character and subword vocabularies and CTC label construction.

The letter vocabulary V drives CTC supervision: index 0 is the blank,
followed by an unknown-character symbol and a subword separator.  The
subword vocabulary B is shared by both translation directions; words are
tokenized independently by greedy longest-prefix match, and separator
placement alone encodes token boundaries (no leading-space marker).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "LetterVocab", "SubwordVocab", "CtcLabels", "build_ctc_labels",
    "tokenize_subwords", "tokenize_words", "detokenize", "text_to_ids",
    "save_symbols", "load_letter_vocab", "load_subword_vocab",
    "EmptyText", "EmptyLabels", "LABEL_MODES",
]

BLANK_SYM = "<blank>"
UNK_SYM = "<unk>"
SEP_SYM = "<sep>"
LANG_SYM = "<lang>"
EOS_SYM = "</s>"

LABEL_MODES = ("word", "subword", "subword_unk")


class EmptyText(Exception):
    """Input text is empty or whitespace-only."""


class EmptyLabels(Exception):
    """Character filtering removed every label."""


@dataclass(frozen=True)
class LetterVocab:
    """CTC symbol inventory: blank, unk, sep, then single characters."""

    symbols: tuple[str, ...]
    blank_id: int = 0
    unk_id: int = 1
    sep_id: int = 2
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        syms = self.symbols
        if len(set(syms)) != len(syms):
            raise ValueError("duplicate symbols in letter vocabulary")
        if syms[:3] != (BLANK_SYM, UNK_SYM, SEP_SYM):
            raise ValueError("letter vocabulary must start with blank, unk, sep")
        for s in syms[3:]:
            if len(s) != 1:
                raise ValueError(f"letter symbol must be a single character: {s!r}")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(syms)})

    @classmethod
    def build(cls, letters) -> "LetterVocab":
        return cls((BLANK_SYM, UNK_SYM, SEP_SYM) + tuple(letters))

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, ch: str) -> bool:
        return ch in self._index and len(ch) == 1

    def id_of(self, ch: str) -> int:
        return self._index[ch]


@dataclass(frozen=True)
class SubwordVocab:
    """Shared translation vocabulary: <lang>, </s>, then subword units."""

    subwords: tuple[str, ...]
    lang_id: int = 0
    eos_id: int = 1
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        subs = self.subwords
        if len(set(subs)) != len(subs):
            raise ValueError("duplicate entries in subword vocabulary")
        if subs[:2] != (LANG_SYM, EOS_SYM):
            raise ValueError("subword vocabulary must start with <lang>, </s>")
        for s in subs[2:]:
            if not s or " " in s:
                raise ValueError(f"bad subword surface: {s!r}")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(subs)})

    @classmethod
    def build(cls, alphabet, extra_subwords) -> "SubwordVocab":
        """Every alphabet character is guaranteed a one-character entry, so
        any string over the alphabet is tokenizable."""
        units: list[str] = [LANG_SYM, EOS_SYM]
        for s in extra_subwords:
            if s not in units:
                units.append(s)
        for ch in alphabet:
            if ch not in units:
                units.append(ch)
        return cls(tuple(units))

    def __len__(self) -> int:
        return len(self.subwords)

    def surface(self, idx: int) -> str:
        return self.subwords[idx]

    def id_of(self, surface: str) -> int:
        return self._index[surface]


@dataclass(frozen=True)
class CtcLabels:
    """A CTC target sequence in one of the three labeling modes."""

    ids: tuple[int, ...]
    mode: str

    def __post_init__(self):
        if self.mode not in LABEL_MODES:
            raise ValueError(f"unknown label mode {self.mode!r}")
        if any(i == 0 for i in self.ids):
            raise ValueError("label ids must not contain the blank")
        if self.mode in ("subword", "subword_unk"):
            if not self.ids:
                raise ValueError(f"{self.mode} labels must be non-empty")
            if self.ids[-1] != 2:
                raise ValueError(f"{self.mode} labels must end with the separator")

    def __len__(self) -> int:
        return len(self.ids)


# ---- tokenization -------------------------------------------------------

def _word_tokens(word: str, vocab: SubwordVocab) -> list[int]:
    """Greedy longest-prefix match of one whitespace-delimited word."""
    out: list[int] = []
    i = 0
    while i < len(word):
        for j in range(len(word), i, -1):
            idx = vocab._index.get(word[i:j])
            if idx is not None:
                out.append(idx)
                i = j
                break
        else:
            raise ValueError(f"cannot tokenize {word!r}: no unit matches at {word[i:]!r}")
    return out


def tokenize_words(text: str, vocab: SubwordVocab) -> list[list[int]]:
    """Token ids grouped per word; words are tokenized independently."""
    words = text.upper().split()
    if not words:
        raise EmptyText("cannot tokenize empty text")
    return [_word_tokens(w, vocab) for w in words]


def tokenize_subwords(text: str, vocab: SubwordVocab) -> list[int]:
    """Flat token id sequence for ``text`` (no specials added)."""
    return [i for group in tokenize_words(text, vocab) for i in group]


def detokenize(ids, vocab: SubwordVocab) -> str:
    """Space-joined token surfaces (word boundaries are not recoverable
    from a flat id sequence; hypotheses are reported in this form)."""
    return " ".join(vocab.surface(i) for i in ids)


def text_to_ids(text: str, vocab: SubwordVocab) -> list[int]:
    """Encoder input ids: <lang>, the subword tokens, </s>."""
    return [vocab.lang_id] + tokenize_subwords(text, vocab) + [vocab.eos_id]


# ---- CTC label construction ---------------------------------------------

def build_ctc_labels(text: str, mode: str, letters: LetterVocab,
                     subwords: SubwordVocab | None = None) -> CtcLabels:
    """Construct the CTC target for ``text`` in the given mode.

    word:         per-word letters followed by a separator; characters
                  outside V are dropped, words left empty are dropped.
    subword:      per-subword letters followed by a separator; characters
                  outside V are dropped, subwords left empty are dropped.
    subword_unk:  like subword, but each character outside V maps to the
                  unk id so its position is preserved.
    """
    if mode not in LABEL_MODES:
        raise ValueError(f"unknown label mode {mode!r}")
    text_u = text.upper()
    if not text_u.split():
        raise EmptyText("cannot build labels for empty text")

    ids: list[int] = []
    if mode == "word":
        for word in text_u.split():
            kept = [letters.id_of(c) for c in word if c in letters]
            if kept:
                ids.extend(kept)
                ids.append(letters.sep_id)
    else:
        if subwords is None:
            raise ValueError("subword modes need a subword vocabulary")
        for group in tokenize_words(text_u, subwords):
            for tok in group:
                surf = subwords.surface(tok)
                if mode == "subword":
                    kept = [letters.id_of(c) for c in surf if c in letters]
                    if kept:
                        ids.extend(kept)
                        ids.append(letters.sep_id)
                else:
                    ids.extend(letters.id_of(c) if c in letters else letters.unk_id
                               for c in surf)
                    ids.append(letters.sep_id)
    if not ids:
        raise EmptyLabels(f"no labels survive filtering in mode {mode!r}")
    return CtcLabels(tuple(ids), mode)


# ---- file format --------------------------------------------------------

def save_symbols(path, symbols) -> None:
    """One symbol per line, UTF-8, specials first (construction order)."""
    Path(path).write_text("".join(s + "\n" for s in symbols), encoding="utf-8")


def load_letter_vocab(path) -> LetterVocab:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return LetterVocab(tuple(lines))


def load_subword_vocab(path) -> SubwordVocab:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return SubwordVocab(tuple(lines))
