"""CTC loss against brute-force path enumeration, greedy decoding, and WER.

Run:  python3 demos/04_ctc_loss_and_wer.py
"""

import numpy as np

from speechalign import ctc
from speechalign import numerics as nm

rng = np.random.default_rng(0)

print("== CTC loss vs enumerating every alignment path ==")
T, V = 4, 3  # 3 classes + blank handled inside: logits are (T, V) with blank col 0
logits = rng.standard_normal((T, V))
log_probs = nm.log_softmax(nm.Tensor(logits), axis=-1)
target = ctc.CtcTarget((1, 2))
fast = ctc.ctc_loss(log_probs, target).item()
slow = ctc.ctc_brute_force_loss(log_probs.data, target)
print(f"forward-backward: {fast:.10f}")
print(f"brute force     : {slow:.10f}   (|diff| = {abs(fast - slow):.2e})")

print("\n== infeasible targets are +inf, not an exception ==")
too_short = ctc.ctc_loss(nm.Tensor(np.zeros((2, 3))), ctc.CtcTarget((1, 1)))
print(f"2 frames for target 'aa' (needs a separating blank): loss = {too_short.item()}")

print("\n== greedy decoding collapses repeats and strips blanks ==")
frames = np.full((5, 3), -10.0)
for t, s in enumerate([0, 1, 1, 0, 2]):  # blank, a, a, blank, b
    frames[t, s] = 0.0
print(f"argmax trace [blank a a blank b] -> labels {ctc.ctc_greedy_decode(frames)}")

print("\n== word error rate ==")
ref = "the cat sat on the mat"
for hyp in (ref, "the cat sat on mat", "the bat sat on the mat quickly", ""):
    r = ctc.wer_strings(ref, hyp)
    print(f"  {hyp!r:42s} WER {r.rate:.3f}  (S={r.substitutions} I={r.insertions} D={r.deletions})")
