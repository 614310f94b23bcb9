"""CTC from both ends: the forward DP against a literal path sum, and
the compression adapter collapsing oracle posteriors into one vector
per subword.

The brute force enumerates every |V|^n frame path, so the comparison is
only run on a deliberately tiny instance -- the same construction the
test suite uses, writ small.

Run:  python demos/02_ctc_and_compression.py
"""
import itertools

import numpy as np

from zeroswot import data
from zeroswot.autodiff import Tensor
from zeroswot.compression import adapt, char_compress, split_chunks
from zeroswot.ctc import collapse, ctc_loss, greedy_decode
from zeroswot.vocab import build_ctc_labels

rng = np.random.default_rng(0)

# --- tiny brute-force cross-check -----------------------------------
n, V = 5, 3
logits = rng.normal(size=(n, V))
lp = logits - np.logaddexp.reduce(logits, axis=1, keepdims=True)
target = [1, 2]

loss, feasible = ctc_loss(Tensor(lp), target)
print(f"DP loss for target {target}: {float(loss.data):.10f} "
      f"(feasible: {feasible})")

total = -np.inf
matching = 0
for path in itertools.product(range(V), repeat=n):
    if collapse(path) == target:
        total = np.logaddexp(total, sum(lp[i, p] for i, p in enumerate(path)))
        matching += 1
print(f"brute force over {V**n} paths ({matching} collapse to the target): "
      f"{-total:.10f}")
print(f"|difference| = {abs(float(loss.data) + total):.2e}")
print()

# --- greedy collapse on a real example ------------------------------
spec = data.GeneratorSpec()
letters = spec.letter_vocab()
ex = data.gen_corpus(spec, 1, 3)[0]
oracle = data.oracle_log_probs(ex.alignment, len(letters))
path, collapsed = greedy_decode(Tensor(oracle))
print("greedy path through oracle posteriors, collapsed:")
print(" ", " ".join(letters.symbols[i] for i in collapsed))
labels = build_ctc_labels(ex.transcription, "subword_unk", letters,
                          spec.subword_vocab())
print("  equals the labels built from the transcription:",
      collapsed == list(labels.ids))
print()

# --- compression: frames -> characters -> subword chunks ------------
a = Tensor(rng.normal(size=(len(ex.alignment), 8)))   # stand-in states
cr = char_compress(a, Tensor(oracle))
chunks = split_chunks(cr)
n_subwords = sum(1 for i in labels.ids if i == letters.sep_id)
print(f"{len(ex.alignment)} frames -> {cr.reprs.shape[0]} character runs "
      f"-> {len(chunks)} chunks ({n_subwords} subwords in the labels)")

for mode in ("none", "stride4", "char_only"):
    rep = adapt(a, Tensor(oracle), mode)
    print(f"  adapter mode {mode:>9}: {rep.reprs.shape[0]:3d} vectors")
print("  (the subword mode additionally runs each chunk through the "
      "chunk encoder: one vector per chunk)")
