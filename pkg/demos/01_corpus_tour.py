"""Walk through one synthetic example end to end.

Shows what the generator actually emits: the transcription, its cipher
translation, the subword segmentation, the frame-level alignment, and
why the alignment is always a feasible CTC target for the frames.

Run:  python demos/01_corpus_tour.py [--seed 7]
"""
import argparse

import numpy as np

from zeroswot import data, vocab
from zeroswot.ctc import collapse, min_frames


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    spec = data.GeneratorSpec()
    letters = spec.letter_vocab()
    subwords = spec.subword_vocab()

    print("lexicon (first 8 of", spec.lexicon_size, "words):")
    print(" ", " ".join(spec.lexicon()[:8]))
    print("cipher (what 'translation' means here):")
    cipher = spec.cipher()
    for src in spec.lexicon()[:4]:
        print(f"  {src} -> {cipher[src]}")
    print()

    corpus = data.gen_corpus(spec, 4, args.seed)
    ex = corpus[0]
    print("transcription: ", ex.transcription)
    print("translation:   ", vocab.detokenize(list(ex.translation_ids), subwords))
    print("  (each word ciphered, word order reversed)")
    print()

    piece_ids = vocab.tokenize_subwords(ex.transcription, subwords)
    print("subword pieces:", [subwords.surface(i) for i in piece_ids],
          f"({len(piece_ids)} tokens)")

    labels = vocab.build_ctc_labels(ex.transcription, "subword_unk",
                                    letters, subwords)
    print("CTC labels:    ", [letters.symbols[i] for i in labels.ids])
    print()

    print("alignment (one entry per post-pooling frame):")
    print(" ", " ".join(letters.symbols[i] for i in ex.alignment))
    assert collapse(ex.alignment) == list(labels.ids), \
        "alignment must collapse to the labels"
    print("  collapses to the labels above: ok")
    print()

    T, F = ex.frames.shape
    need = min_frames(list(labels.ids))
    print(f"frames: {T} x {F}  (alignment len {len(ex.alignment)}, "
          f"x{spec.downsample} upsampling)")
    print(f"CTC feasibility: need >= {need} post-pooling frames, "
          f"have {len(ex.alignment)} (slack {len(ex.alignment) - need})")
    print(f"frame noise sigma: {spec.noise_sigma} "
          f"(std of frames: {np.std(ex.frames):.3f})")


if __name__ == "__main__":
    main()
