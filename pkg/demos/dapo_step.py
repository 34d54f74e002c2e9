"""
Anatomy of one DAPO update
==========================

Group-relative advantages, the dynamic sampling filter and the asymmetric
clip, shown on hand-made reward groups and then on a real rollout step.
"""

import numpy as np

from regft import dapo, synthenv
from regft.corpus import Trajectory, TrajectoryGroup
from regft.pipeline import make_config, train_raw_policy


def group(rewards):
    trajs = [Trajectory("p", f"\\boxed{{{r}}}", [0], [0.0], reward=r) for r in rewards]
    return TrajectoryGroup("p", trajs)


# advantages are rewards standardized within the group
print(dapo.group_advantages(group([1, 0, 0, 1])).advantages)

# groups where every sample agrees carry no signal and are dropped
res = dapo.dynamic_sampling_filter([group([1, 1, 1, 1]), group([0, 0, 0, 0]), group([1, 0, 0, 0])])
print("kept", len(res.kept), "all-correct", res.discarded_all_correct, "all-wrong", res.discarded_all_wrong)

# the clip allows ratios up to 1.28 for positive advantages but only down to 0.8
ratio = np.linspace(0.6, 1.5, 10)
print(np.round(dapo.clipped_objective(ratio, 1.0), 3))
print(np.round(dapo.clipped_objective(ratio, -1.0), 3))

# a few real steps from a warmed toy policy
cfg = make_config({"seed": 0, "warmup_n": 4000, "rl_prompt_batch": 16})
params = train_raw_policy(cfg)
train = synthenv.generate_corpus(200, {2: 0.5, 8: 0.5}, seed=9, modulus=cfg.modulus)
run = dapo.run_rl(params, train, cfg.rl_config, 3, 0, cfg.decode)
for r in run.reports:
    print(f"step {r.step}: reward {r.mean_reward:.3f}, kept {r.kept_groups} groups, clip fraction {r.clip_fraction:.3f}")
