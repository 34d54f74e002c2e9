"""
Reference-guided sampling on hard chains
========================================

Warm a small policy on short arithmetic chains, find the problems it
rarely solves, then sample those again with most of the reference solution
in the prompt.
"""

from regft import analytics, synthenv
from regft.pipeline import make_config, train_raw_policy
from regft.rollout import ToyBackend, build_hint, build_prompt, sample_groups

cfg = make_config({"seed": 0, "warmup_n": 4000})
params = train_raw_policy(cfg)
backend = ToyBackend(params)

# a few long chains
problems = synthenv.generate_corpus(40, {8: 1.0}, seed=5, modulus=cfg.modulus)
p = problems[0]
print(p.question)
print(p.reference_solution)

# the hint keeps 80% of the reference sentences, the final answer is withheld
print(build_prompt(p, "guided", build_hint(p.reference_solution)))

# 16 standard samples decide which problems count as hard (< 25% correct)
stats = analytics.stats_from_groups(sample_groups(backend, problems, "standard", 16, cfg.decode, seed=1))
hard = [q for q, s in zip(problems, stats) if analytics.classify_difficulty(s).is_hard]
print(f"{len(hard)} of {len(problems)} problems are hard")

# 64 samples per hard problem in each mode
std = analytics.stats_from_groups(sample_groups(backend, hard, "standard", 64, cfg.decode, seed=2))
gui = analytics.stats_from_groups(sample_groups(backend, hard, "guided", 64, cfg.decode, seed=2))
print(analytics.solve_set_overlap(std, gui))
