"""
Scoring answers and estimating pass@k
=====================================

A trajectory earns reward 1 only when its last boxed answer matches the gold
answer. Numeric answers are compared as exact rationals.
"""

from regft.analytics import pass_at_k
from regft.verifier import extract_boxed, verify

# only the last box counts
text = r"First guess \boxed{3}, but redoing the step gives \boxed{1/2}."
print("extracted:", extract_boxed(text))
print("vs 0.5:", verify(text, "0.5"))
print("vs 3:  ", verify(text, "3"))
print("no box:", verify("the answer is 7", "7"))

# pass@k from N samples with c correct: chance that k draws without
# replacement contain at least one correct sample
N = 64
for c in (0, 1, 4, 16):
    row = "  ".join(f"k={k}: {pass_at_k(N, c, k):.3f}" for k in (1, 4, 16, 64))
    print(f"c={c:2d}  {row}")
