"""DAPO-style RL: group-normalized advantages, decoupled clipping, dynamic sampling.

No KL term and no entropy bonus. The policy loss is the negative token-level
mean of ``min(rho * A, clip(rho, 1 - eps_low, 1 + eps_high) * A)`` over every
completion token in a minibatch.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import Problem, TrajectoryGroup
from .optim import AdamW
from .policy import DecodeConfig, PolicyParams, stack_windows, token_logprobs, weighted_logprob_grad
from .rollout import ToyBackend, encode_prompt, build_prompt, sample_groups

log = logging.getLogger(__name__)


class DegenerateGroupError(ValueError):
    """All rewards in a group are equal, so advantages are undefined."""


@dataclass(frozen=True)
class RlConfig:
    eps_low: float = 0.2
    eps_high: float = 0.28
    learning_rate: float = 1e-3
    warmup_rollout_steps: int = 20
    group_size: int = 16
    prompt_batch: int = 512
    minibatch_trajectories: int = 2048
    updates_per_rollout: int = 4
    advantage_epsilon: float = 1e-8
    resample_budget: Optional[int] = None  # extra prompts; None -> 4 * prompt_batch
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0

    def validate(self) -> None:
        if not self.eps_low <= self.eps_high:
            raise ValueError("eps_low must not exceed eps_high")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if min(self.prompt_batch, self.minibatch_trajectories, self.updates_per_rollout) < 1:
            raise ValueError("batch sizes must be positive")
        if self.warmup_rollout_steps < 0:
            raise ValueError("warmup_rollout_steps must be >= 0")

    @property
    def budget(self) -> int:
        return 4 * self.prompt_batch if self.resample_budget is None else self.resample_budget

    def lr_at(self, rollout_step: int) -> float:
        if self.warmup_rollout_steps <= 0:
            return self.learning_rate
        return self.learning_rate * min(1.0, (rollout_step + 1) / self.warmup_rollout_steps)


def paper_rl_config(group_size: int = 16) -> RlConfig:
    """Hyperparameters of the reported runs (prompt batch follows the group size)."""
    batches = {16: 512, 64: 128}
    if group_size not in batches:
        raise ValueError("the paper profile defines 16 or 64 responses per prompt")
    return RlConfig(
        eps_low=0.2,
        eps_high=0.28,
        learning_rate=1e-6,
        warmup_rollout_steps=20,
        group_size=group_size,
        prompt_batch=batches[group_size],
        minibatch_trajectories=2048,
        updates_per_rollout=4,
    )


@dataclass
class AdvantagedGroup:
    group: TrajectoryGroup
    advantages: np.ndarray

    @property
    def old_logprobs(self) -> list[list[float]]:
        return [t.token_logprobs for t in self.group.trajectories]


def group_advantages(group: TrajectoryGroup, eps: float = 1e-8) -> AdvantagedGroup:
    r = np.asarray(group.rewards, dtype=np.float64)
    if r.size == 0 or np.all(r == r[0]):
        raise DegenerateGroupError(f"group {group.problem_id} has uniform rewards")
    adv = (r - r.mean()) / (r.std() + eps)
    return AdvantagedGroup(group, adv)


@dataclass
class FilterResult:
    kept: list[TrajectoryGroup]
    discarded_all_correct: int = 0
    discarded_all_wrong: int = 0

    @property
    def discarded(self) -> int:
        return self.discarded_all_correct + self.discarded_all_wrong


def dynamic_sampling_filter(groups: Sequence[TrajectoryGroup]) -> FilterResult:
    res = FilterResult([])
    for g in groups:
        c = g.n_correct
        if c == 0:
            res.discarded_all_wrong += 1
        elif c == g.size:
            res.discarded_all_correct += 1
        else:
            res.kept.append(g)
    return res


def clipped_objective(ratio, advantage, eps_low: float = 0.2, eps_high: float = 0.28):
    """``min(rho * A, clip(rho, 1 - eps_low, 1 + eps_high) * A)`` elementwise."""
    ratio = np.asarray(ratio, dtype=np.float64)
    if not np.all(np.isfinite(ratio)):
        raise FloatingPointError("non-finite importance ratio")
    if np.any(ratio <= 0):
        raise ValueError("importance ratio must be positive")
    clipped = np.clip(ratio, 1.0 - eps_low, 1.0 + eps_high)
    out = np.minimum(ratio * advantage, clipped * advantage)
    return float(out) if out.ndim == 0 else out


@dataclass
class TokenBatch:
    """Flattened completion tokens of a set of trajectories."""

    ctx: np.ndarray
    targets: np.ndarray
    old_logprobs: np.ndarray
    advantages: np.ndarray


def make_token_batch(window: int, items) -> TokenBatch:
    """``items`` are (prompt_tokens, trajectory, advantage) triples."""
    items = [it for it in items if len(it[1].tokens) > 0]
    ctx, tgt, owner = stack_windows([(p, t.tokens) for p, t, _ in items], window)
    old = np.concatenate([np.asarray(t.token_logprobs) for _, t, _ in items]) if items else np.zeros(0)
    adv = np.asarray([a for _, _, a in items], dtype=np.float64)[owner] if items else np.zeros(0)
    return TokenBatch(ctx, tgt, old, adv)


def clipped_loss_and_grad(params: PolicyParams, batch: TokenBatch, eps_low: float, eps_high: float):
    """Token-mean clipped loss, its gradient, and diagnostics."""
    n = len(batch.targets)
    if n == 0:
        return 0.0, np.zeros(params.arch.n_params), {"clip_fraction": 0.0, "mean_ratio": 1.0}
    A = batch.advantages
    seen = {}

    def token_weights(lp):
        ratio = np.exp(lp - batch.old_logprobs)
        unclipped = ratio * A
        clipped = np.clip(ratio, 1.0 - eps_low, 1.0 + eps_high) * A
        seen.update(lp=lp, ratio=ratio, unclipped=unclipped, clipped=clipped)
        # d/dθ (rho * A) = A * rho * dlogp/dθ; the clipped branch is constant
        return np.where(unclipped <= clipped, -A * ratio / n, 0.0)

    _, grad = weighted_logprob_grad(params, batch.ctx, batch.targets, token_weights)
    lp, ratio = seen["lp"], seen["ratio"]
    unclipped, clipped = seen["unclipped"], seen["clipped"]
    obj = np.minimum(unclipped, clipped)
    info = {
        "clip_fraction": float(np.mean(unclipped > clipped)),
        "mean_ratio": float(ratio.mean()),
        "max_abs_log_ratio": float(np.max(np.abs(lp - batch.old_logprobs))),
    }
    return float(-obj.mean()), grad, info


def clipped_loss(params: PolicyParams, batch: TokenBatch, eps_low: float, eps_high: float) -> float:
    lp = token_logprobs(params, batch.ctx, batch.targets)
    ratio = np.exp(lp - batch.old_logprobs)
    return float(-np.mean(clipped_objective(ratio, batch.advantages, eps_low, eps_high)))


@dataclass
class StepReport:
    step: int
    kept_groups: int
    discarded_all_correct: int
    discarded_all_wrong: int
    mean_reward: float
    clip_fraction: float
    lr: float
    mean_ratio: float
    skipped: bool = False
    prompts_sampled: int = 0
    first_minibatch_loss: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "kept_groups": self.kept_groups,
            "discarded_all_correct": self.discarded_all_correct,
            "discarded_all_wrong": self.discarded_all_wrong,
            "mean_reward": self.mean_reward,
            "clip_fraction": self.clip_fraction,
            "lr": self.lr,
            "mean_ratio": self.mean_ratio,
        }


class RlState:
    """Live parameters plus optimizer state across rollout steps."""

    def __init__(self, params: PolicyParams, config: RlConfig):
        self.params = params.snapshot()
        self.opt = AdamW(config.learning_rate, config.betas, weight_decay=config.weight_decay)


class _PromptStream:
    """Deterministic epoch-shuffled stream of problems."""

    def __init__(self, problems: Sequence[Problem], seed: int):
        self.problems = list(problems)
        self.rng = np.random.default_rng(seed)
        self.order: list[int] = []

    def take(self, n: int) -> list[Problem]:
        out = []
        while len(out) < n and self.problems:
            if not self.order:
                self.order = list(self.rng.permutation(len(self.problems)))
            out.append(self.problems[self.order.pop()])
        return out


def rl_step(
    state: RlState,
    stream: _PromptStream,
    config: RlConfig,
    rollout_step: int,
    seed: int,
    decode: DecodeConfig,
    workers: int = 1,
) -> StepReport:
    params = state.params
    old = params.snapshot()
    backend = ToyBackend(old, workers=workers)
    kept: list[TrajectoryGroup] = []
    n_correct_all = n_wrong_all = 0
    all_rewards: list[int] = []
    sampled = 0
    limit = config.prompt_batch + config.budget
    while len(kept) < config.prompt_batch and sampled < limit:
        want = min(config.prompt_batch - len(kept), limit - sampled)
        batch = stream.take(want)
        if not batch:
            break
        sampled += len(batch)
        groups = sample_groups(
            backend, batch, "standard", config.group_size, decode, seed,
            rollout_step=rollout_step,
        )
        for g in groups:
            all_rewards.extend(g.rewards)
        f = dynamic_sampling_filter(groups)
        kept.extend(f.kept)
        n_correct_all += f.discarded_all_correct
        n_wrong_all += f.discarded_all_wrong
        if sampled >= limit:
            break
    lr = config.lr_at(rollout_step)
    mean_reward = float(np.mean(all_rewards)) if all_rewards else 0.0
    if len(kept) < config.prompt_batch:
        log.warning("step %d: only %d/%d reward-diverse groups", rollout_step, len(kept), config.prompt_batch)
    if not kept:
        return StepReport(rollout_step, 0, n_correct_all, n_wrong_all, mean_reward, 0.0, lr, 1.0,
                          skipped=True, prompts_sampled=sampled)

    by_id = {p.id: p for p in stream.problems}
    items = []
    for g in kept:
        ag = group_advantages(g, config.advantage_epsilon)
        prompt = encode_prompt(build_prompt(by_id[g.problem_id], "standard"))
        items.extend((prompt, t, a) for t, a in zip(g.trajectories, ag.advantages))
    rng = np.random.default_rng([seed, rollout_step, 7])
    order = rng.permutation(len(items))
    n_updates = min(config.updates_per_rollout, len(items))
    clip_fracs, ratios, weights = [], [], []
    first_loss = float("nan")
    for u, part in enumerate(np.array_split(order, n_updates)):
        tb = make_token_batch(params.arch.window, [items[i] for i in part])
        loss, grad, info = clipped_loss_and_grad(params, tb, config.eps_low, config.eps_high)
        if u == 0:
            first_loss = loss
        clip_fracs.append(info["clip_fraction"])
        ratios.append(info["mean_ratio"])
        weights.append(len(tb.targets))
        params.update(state.opt.step(params.vector, grad, lr=lr))
    w = np.asarray(weights, dtype=np.float64)
    return StepReport(
        rollout_step,
        len(kept),
        n_correct_all,
        n_wrong_all,
        mean_reward,
        float(np.dot(clip_fracs, w) / w.sum()),
        lr,
        float(np.dot(ratios, w) / w.sum()),
        prompts_sampled=sampled,
        first_minibatch_loss=first_loss,
    )


@dataclass
class RlRun:
    params: PolicyParams
    reports: list[StepReport] = field(default_factory=list)
    checkpoints: dict[int, PolicyParams] = field(default_factory=dict)
    evals: list[dict] = field(default_factory=list)


EvalHook = Callable[[PolicyParams, int], dict]


def run_rl(
    params: PolicyParams,
    problems: Sequence[Problem],
    config: RlConfig,
    steps: int,
    seed: int,
    decode: DecodeConfig,
    eval_hook: Optional[EvalHook] = None,
    eval_every: int = 0,
    workers: int = 1,
) -> RlRun:
    """Run ``steps`` rollout steps; evaluates at step 0, every ``eval_every`` and at the end."""
    config.validate()
    state = RlState(params, config)
    run = RlRun(state.params)
    stream = _PromptStream(problems, seed)

    def evaluate(step: int):
        run.checkpoints[step] = state.params.snapshot()
        if eval_hook is not None:
            run.evals.append({"step": step, **eval_hook(state.params, step)})

    if eval_hook is not None or steps == 0:
        evaluate(0)
    for step in range(steps):
        report = rl_step(state, stream, config, step, seed, decode, workers)
        if not all(math.isfinite(x) for x in (report.mean_ratio, report.clip_fraction)):
            raise FloatingPointError(f"numerical failure at rollout step {step}")
        run.reports.append(report)
        done = step + 1
        if done == steps or (eval_every and done % eval_every == 0):
            evaluate(done)
    run.params = state.params
    return run


def write_step_reports(path, reports: Sequence[StepReport]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_dict()) + "\n")
