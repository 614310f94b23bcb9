"""Vocabularies, greedy tokenization, CTC label construction."""
import pytest

from zeroswot.vocab import (CtcLabels, EmptyLabels, EmptyText, LetterVocab,
                            SubwordVocab, build_ctc_labels, detokenize,
                            load_letter_vocab, load_subword_vocab,
                            save_symbols, text_to_ids, tokenize_subwords,
                            tokenize_words)


@pytest.fixture
def letters():
    return LetterVocab.build("ABCDENOMRST.")


@pytest.fixture
def subs():
    return SubwordVocab.build("ABCDENOMRST.",
                              ("RAND", "OM", "SENT", "ENCE", "."))


# ---- construction invariants --------------------------------------------

def test_letter_vocab_layout(letters):
    assert letters.symbols[:3] == ("<blank>", "<unk>", "<sep>")
    assert (letters.blank_id, letters.unk_id, letters.sep_id) == (0, 1, 2)
    assert "A" in letters and "<sep>" not in letters  # specials aren't letters
    assert letters.id_of("A") == 3


def test_letter_vocab_rejects_bad_layout():
    with pytest.raises(ValueError):
        LetterVocab(("<unk>", "<blank>", "<sep>", "A"))
    with pytest.raises(ValueError):
        LetterVocab(("<blank>", "<unk>", "<sep>", "AB"))
    with pytest.raises(ValueError):
        LetterVocab(("<blank>", "<unk>", "<sep>", "A", "A"))


def test_subword_vocab_layout(subs):
    assert subs.subwords[:2] == ("<lang>", "</s>")
    assert (subs.lang_id, subs.eos_id) == (0, 1)
    # every alphabet character is present as a fallback unit
    for ch in "ABCDENOMRST.":
        assert subs.id_of(ch) >= 2


def test_subword_vocab_rejects_bad_surfaces():
    with pytest.raises(ValueError):
        SubwordVocab(("<lang>", "</s>", "A B"))
    with pytest.raises(ValueError):
        SubwordVocab(("</s>", "<lang>", "A"))


# ---- tokenization --------------------------------------------------------

def test_greedy_longest_prefix(subs):
    # RANDOM = RAND + OM, SENTENCE. = SENT + ENCE + .
    assert [subs.surface(i) for i in tokenize_subwords("RANDOM", subs)] \
        == ["RAND", "OM"]
    groups = tokenize_words("RANDOM SENTENCE.", subs)
    assert [[subs.surface(i) for i in g] for g in groups] \
        == [["RAND", "OM"], ["SENT", "ENCE", "."]]


def test_single_char_fallback(subs):
    # no multi-char unit matches, so tokenization falls back per character
    assert [subs.surface(i) for i in tokenize_subwords("CAB", subs)] \
        == ["C", "A", "B"]


def test_tokenize_lowercases_via_upper(subs):
    assert tokenize_subwords("random", subs) == tokenize_subwords("RANDOM", subs)


def test_tokenize_untokenizable(subs):
    with pytest.raises(ValueError):
        tokenize_subwords("XYZ", subs)
    with pytest.raises(EmptyText):
        tokenize_words("   ", subs)


def test_detokenize_round_trip(subs):
    ids = tokenize_subwords("RANDOM SENTENCE.", subs)
    assert detokenize(ids, subs) == "RAND OM SENT ENCE ."


def test_text_to_ids_specials(subs):
    ids = text_to_ids("RANDOM", subs)
    assert ids[0] == subs.lang_id and ids[-1] == subs.eos_id
    assert ids[1:-1] == tokenize_subwords("RANDOM", subs)


# ---- CTC labels ----------------------------------------------------------

def _surfaces(labels, letters):
    return [letters.symbols[i] for i in labels.ids]


def test_word_mode_labels(letters, subs):
    labels = build_ctc_labels("RANDOM SENTENCE.", "word", letters)
    assert _surfaces(labels, letters) == list("RANDOM") + ["<sep>"] \
        + list("SENTENCE.") + ["<sep>"]


def test_subword_mode_labels(letters, subs):
    labels = build_ctc_labels("RANDOM SENTENCE.", "subword", letters, subs)
    assert _surfaces(labels, letters) == (
        list("RAND") + ["<sep>"] + list("OM") + ["<sep>"]
        + list("SENT") + ["<sep>"] + list("ENCE") + ["<sep>"]
        + ["."] + ["<sep>"])
    assert labels.ids[-1] == letters.sep_id


def test_subword_unk_preserves_positions():
    # alphabet without '.': subword mode drops it, subword_unk keeps a slot
    letters = LetterVocab.build("ABCDENOMRST")
    subs = SubwordVocab.build("ABCDENOMRST.", ("RAND", "OM", "SENT", "ENCE", "."))
    dropped = build_ctc_labels("SENTENCE.", "subword", letters, subs)
    kept = build_ctc_labels("SENTENCE.", "subword_unk", letters, subs)
    assert len(kept) == len(dropped) + 2  # unk for '.', plus its separator
    assert kept.ids[-2] == letters.unk_id


def test_label_errors(letters, subs):
    with pytest.raises(EmptyText):
        build_ctc_labels("  ", "word", letters)
    with pytest.raises(ValueError):
        build_ctc_labels("A", "nope", letters)
    with pytest.raises(ValueError):
        build_ctc_labels("A", "subword", letters)  # needs subword vocab
    # every character outside V in word mode -> nothing survives
    with pytest.raises(EmptyLabels):
        build_ctc_labels("!!", "word", letters)


def test_ctc_labels_validation():
    with pytest.raises(ValueError):
        CtcLabels((0, 3), "word")  # blank forbidden
    with pytest.raises(ValueError):
        CtcLabels((3, 4), "subword")  # must end with separator
    CtcLabels((3, 4, 2), "subword_unk")


# ---- file round trip -----------------------------------------------------

def test_symbol_file_round_trip(tmp_path, letters, subs):
    save_symbols(tmp_path / "letters.txt", letters.symbols)
    save_symbols(tmp_path / "subwords.txt", subs.subwords)
    assert load_letter_vocab(tmp_path / "letters.txt") == letters
    assert load_subword_vocab(tmp_path / "subwords.txt") == subs
