"""Corpus generator: alignment/label agreement, cipher determinism,
splits, restricted views, and the JSON-lines container."""
import numpy as np
import pytest

from zeroswot.ctc import collapse, min_frames
from zeroswot.data import (BadFractions, GeneratorSpec, gen_corpus,
                           load_corpus, mt_view, oracle_log_probs,
                           save_corpus, speech_view, split_corpus)
from zeroswot.vocab import build_ctc_labels, detokenize, tokenize_subwords


@pytest.fixture(scope="module")
def spec():
    return GeneratorSpec()


@pytest.fixture(scope="module")
def corpus(spec):
    return gen_corpus(spec, size=40, seed=9)


def test_spec_validation():
    with pytest.raises(ValueError):
        GeneratorSpec(alphabet="abc")
    with pytest.raises(ValueError):
        GeneratorSpec(alphabet="AAB")
    with pytest.raises(ValueError):
        GeneratorSpec(char_repeats=(0, 2))
    with pytest.raises(ValueError):
        GeneratorSpec(initial_units=("RAND",), continuation_units=("RAND",))
    with pytest.raises(ValueError):
        GeneratorSpec(initial_units=("XQ",))


def test_lexicon_deterministic_and_unambiguous(spec):
    lex = spec.lexicon()
    assert lex == spec.lexicon()
    assert len(set(lex)) == spec.lexicon_size
    vocab = spec.subword_vocab()
    inits = set(spec.initial_units)
    for w in lex:
        pieces = [vocab.surface(t) for t in tokenize_subwords(w, vocab)]
        # words resolve into whole units: one initial, then continuations
        assert pieces[0] in inits
        assert all(p in spec.continuation_units for p in pieces[1:])


def test_cipher_bijection(spec):
    lex = spec.lexicon()
    cipher = spec.cipher()
    assert set(cipher) == set(lex)
    assert set(cipher.values()) == set(lex)
    assert cipher == spec.cipher()


def test_alignment_collapse_equals_labels(spec, corpus):
    letters, subwords = spec.letter_vocab(), spec.subword_vocab()
    for ex in corpus:
        labels = build_ctc_labels(ex.transcription, "subword_unk",
                                  letters, subwords)
        assert tuple(collapse(ex.alignment)) == labels.ids
        # labels always fit the frames available at the output rate
        assert len(ex.alignment) >= min_frames(labels.ids)
        assert ex.frames.shape == (len(ex.alignment) * spec.downsample,
                                   spec.feat_dim)


def test_translation_is_reversed_cipher(spec, corpus):
    cipher = spec.cipher()
    subwords = spec.subword_vocab()
    for ex in corpus:
        words = ex.transcription.rstrip(".").split()
        expected = " ".join(cipher[w] for w in reversed(words))
        if ex.transcription.endswith("."):
            expected += "."
        got = detokenize(ex.translation_ids, subwords).replace(" ", "")
        assert got == expected.replace(" ", "")


def test_transcriptions_unique(corpus):
    texts = [ex.transcription for ex in corpus]
    assert len(set(texts)) == len(texts)


def test_generation_deterministic(spec):
    a = gen_corpus(spec, size=6, seed=3)
    b = gen_corpus(spec, size=6, seed=3)
    for x, y in zip(a, b):
        assert x.transcription == y.transcription
        assert x.translation_ids == y.translation_ids
        np.testing.assert_array_equal(x.frames, y.frames)
    c = gen_corpus(spec, size=6, seed=4)
    assert any(x.transcription != y.transcription for x, y in zip(a, c))


def test_frames_stay_near_prototypes(spec, corpus):
    bases = spec.base_vectors()
    ex = corpus[0]
    r = spec.downsample
    for t, lbl in enumerate(ex.alignment):
        window = ex.frames[t * r:(t + 1) * r]
        err = np.abs(window - bases[lbl]).max()
        assert err < 6 * spec.noise_sigma + 1e-9


def test_oracle_log_probs_argmax(spec, corpus):
    letters = spec.letter_vocab()
    for ex in corpus[:5]:
        lp = oracle_log_probs(ex.alignment, len(letters))
        assert np.all(np.argmax(lp, axis=1) == np.asarray(ex.alignment))
        np.testing.assert_allclose(np.logaddexp.reduce(lp, axis=1), 0.0,
                                   atol=1e-9)


def test_split_corpus_sizes_and_disjoint(corpus):
    train, valid, test = split_corpus(corpus, (0.5, 0.25, 0.25), seed=0)
    assert len(train) == 20 and len(valid) == 10 and len(test) == 10
    ids = [ex.id for part in (train, valid, test) for ex in part]
    assert sorted(ids) == sorted(ex.id for ex in corpus)
    again = split_corpus(corpus, (0.5, 0.25, 0.25), seed=0)
    assert [ex.id for ex in again[0]] == [ex.id for ex in train]
    with pytest.raises(BadFractions):
        split_corpus(corpus, (0.6, 0.6), seed=0)
    with pytest.raises(BadFractions):
        split_corpus(corpus, (-0.5, 1.5), seed=0)


def test_views_restrict_fields(corpus):
    sv = speech_view(corpus)[0]
    assert not hasattr(sv, "translation_ids")
    mv = mt_view(corpus)[0]
    assert not hasattr(mv, "frames")
    assert sv.id == mv.id == corpus[0].id


def test_corpus_round_trip(tmp_path, spec, corpus):
    path = tmp_path / "corpus.jsonl"
    save_corpus(path, spec, corpus)
    spec2, loaded = load_corpus(path)
    assert spec2 == spec
    assert len(loaded) == len(corpus)
    for a, b in zip(corpus, loaded):
        assert (a.id, a.transcription, a.translation_ids, a.alignment) \
            == (b.id, b.transcription, b.translation_ids, b.alignment)
        np.testing.assert_array_equal(a.frames, b.frames)


def test_corpus_rejects_bad_schema(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"schema_version": 99}\n')
    with pytest.raises(ValueError):
        load_corpus(p)
