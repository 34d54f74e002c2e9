"""Supervised datasets (direct reference, ReFT, ReGFT) and the SFT trainer."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import vocab
from .corpus import CorpusError, Problem, Trajectory, TrajectoryGroup, read_jsonl, write_jsonl
from .analytics import DifficultyLabel
from .optim import AdamW
from .policy import PolicyParams, stack_windows, weighted_logprob_grad
from .rollout import build_prompt, encode_prompt
from .verifier import verify

log = logging.getLogger(__name__)

SOURCES = ("reference_direct", "self_generated", "guided_generated")


@dataclass(frozen=True)
class SftExample:
    problem_id: str
    prompt_tokens: tuple[int, ...]
    target_tokens: tuple[int, ...]
    source: str

    def __post_init__(self):
        if not self.target_tokens:
            raise CorpusError(f"{self.problem_id}: empty SFT target")
        if self.source not in SOURCES:
            raise CorpusError(f"unknown SFT source {self.source!r}")

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "prompt_tokens": list(self.prompt_tokens),
            "target_tokens": list(self.target_tokens),
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SftExample":
        return cls(
            str(d["problem_id"]),
            tuple(int(x) for x in d["prompt_tokens"]),
            tuple(int(x) for x in d["target_tokens"]),
            d["source"],
        )


def write_sft_dataset(path, examples: Iterable[SftExample]) -> None:
    write_jsonl(path, (e.to_dict() for e in examples))


def load_sft_dataset(path) -> list[SftExample]:
    return [SftExample.from_dict(d) for d in read_jsonl(path)]


def _hard(labels: Iterable[DifficultyLabel] | Mapping[str, DifficultyLabel]) -> set[str]:
    items = labels.values() if isinstance(labels, Mapping) else labels
    return {lab.problem_id for lab in items if lab.is_hard}


def _correct_unique(trajs: Iterable[Trajectory], gold: str | None) -> list[Trajectory]:
    """Verified-correct trajectories, deduplicated on target tokens/text, shortest first."""
    seen, out = set(), []
    for t in trajs:
        if t.reward != 1 or not t.tokens:
            continue
        if gold is not None and verify(t.text, gold).reward != 1:
            continue
        key = tuple(t.tokens)
        if key in seen:
            continue
        seen.add(key)
        out.append(t)
    # stable: ties keep sampling order
    return sorted(out, key=lambda t: len(t.tokens))


def _by_problem(groups: Iterable[TrajectoryGroup]) -> dict[str, list[Trajectory]]:
    out: dict[str, list[Trajectory]] = {}
    for g in groups:
        out.setdefault(g.problem_id, []).extend(g.trajectories)
    return out


def build_reft_dataset(
    problems: Sequence[Problem],
    groups: Iterable[TrajectoryGroup],
    labels,
    cap: int = 4,
) -> list[SftExample]:
    """Up to ``cap`` distinct verified-correct standard samples per hard problem."""
    hard = _hard(labels)
    trajs = _by_problem(groups)
    out = []
    for p in problems:
        if p.id not in hard:
            continue
        if any(t.mode != "standard" for t in trajs.get(p.id, [])):
            raise ValueError("ReFT expects standard-mode groups")
        prompt = tuple(encode_prompt(build_prompt(p, "standard")))
        for t in _correct_unique(trajs.get(p.id, []), p.gold_answer)[:cap]:
            out.append(SftExample(p.id, prompt, tuple(t.tokens), "self_generated"))
    return out


def build_regft_dataset(
    problems: Sequence[Problem],
    standard_groups: Iterable[TrajectoryGroup],
    guided_groups: Iterable[TrajectoryGroup],
    labels,
    cap: int = 4,
) -> list[SftExample]:
    """ReFT examples plus guided-correct completions, hard problems only.

    Guided completions are stored under the *standard* prompt so the hint never
    reaches training. Self-generated samples fill the cap first, which keeps
    every ReFT example; guided samples top it up, so problems that standard
    sampling never solved get all their slots from guidance.
    """
    hard = _hard(labels)
    std = _by_problem(standard_groups)
    gui = _by_problem(guided_groups)
    out = []
    for p in problems:
        if p.id not in hard:
            continue
        if any(t.mode != "guided" for t in gui.get(p.id, [])):
            raise ValueError("guided groups must be sampled with the guided prompt")
        prompt = tuple(encode_prompt(build_prompt(p, "standard")))
        own = _correct_unique(std.get(p.id, []), p.gold_answer)[:cap]
        seen = {tuple(t.tokens) for t in own}
        picked = [(t, "self_generated") for t in own]
        for t in _correct_unique(gui.get(p.id, []), p.gold_answer):
            if len(picked) >= cap:
                break
            if tuple(t.tokens) in seen:
                continue
            seen.add(tuple(t.tokens))
            picked.append((t, "guided_generated"))
        out.extend(SftExample(p.id, prompt, tuple(t.tokens), src) for t, src in picked)
    return out


@dataclass
class SkipCounter:
    untokenizable: int = 0


def build_direct_reference_dataset(
    problems: Sequence[Problem], labels, skipped: SkipCounter | None = None
) -> list[SftExample]:
    """One (standard prompt, raw reference solution) pair per hard problem."""
    hard = _hard(labels)
    out = []
    for p in problems:
        if p.id not in hard:
            continue
        try:
            target = vocab.encode(p.reference_solution) + [vocab.EOS_ID]
        except vocab.TokenizeError:
            if skipped is not None:
                skipped.untokenizable += 1
            log.warning("skipping %s: reference outside the toy vocabulary", p.id)
            continue
        prompt = tuple(encode_prompt(build_prompt(p, "standard")))
        out.append(SftExample(p.id, prompt, tuple(target), "reference_direct"))
    return out


# --- training -------------------------------------------------------------


@dataclass(frozen=True)
class SftConfig:
    epochs: int = 3
    learning_rate: float = 1e-3
    batch_size: int = 32
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01


def sft_loss_and_grad(params: PolicyParams, examples: Sequence[SftExample]):
    """Mean per-token NLL of the targets and its gradient."""
    ctx, tgt, _ = stack_windows(
        [(e.prompt_tokens, e.target_tokens) for e in examples], params.arch.window
    )
    n = len(tgt)
    lp, grad = weighted_logprob_grad(params, ctx, tgt, np.full(n, -1.0 / n))
    return float(-lp.mean()), grad


def train_sft(
    params: PolicyParams,
    dataset: Sequence[SftExample],
    config: SftConfig = SftConfig(),
    seed: int = 0,
) -> tuple[PolicyParams, list[float]]:
    """AdamW on mean token NLL. Returns a new PolicyParams and per-epoch loss.

    The loss for an epoch is the token-weighted mean NLL seen over its
    mini-batches (measured before each update).
    """
    if not dataset:
        raise ValueError("SFT dataset is empty")
    out = params.snapshot()
    opt = AdamW(config.learning_rate, config.betas, weight_decay=config.weight_decay)
    rng = np.random.default_rng(seed)
    window = params.arch.window
    # precompute token windows once
    ctx, tgt, owner = stack_windows(
        [(e.prompt_tokens, e.target_tokens) for e in dataset], window
    )
    rows_of = np.split(np.arange(len(tgt)), np.cumsum([len(e.target_tokens) for e in dataset])[:-1])
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(len(dataset))
        tot, count = 0.0, 0
        for i in range(0, len(order), config.batch_size):
            rows = np.concatenate([rows_of[j] for j in order[i : i + config.batch_size]])
            n = len(rows)
            lp, grad = weighted_logprob_grad(out, ctx[rows], tgt[rows], np.full(n, -1.0 / n))
            tot += float(-lp.sum())
            count += n
            if config.learning_rate != 0.0:
                out.update(opt.step(out.vector, grad))
        losses.append(tot / count)
    return out, losses
