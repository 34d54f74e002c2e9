"""Prompt construction, hint truncation and grouped sampling.

Two prompt templates are used verbatim: the standard solution prompt and the
reference-guided prompt, which adds a ``Hint:`` section holding the leading
sentences of the reference solution.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

from . import vocab
from .corpus import Problem, Trajectory, TrajectoryGroup
from .policy import DecodeConfig, PolicyParams, sample_batch
from .verifier import extract_boxed, verify, answers_match

STANDARD_TEMPLATE = (
    "Question: {question}\n\n"
    "Please reason step by step, and put your final answer within $boxed{{}}$."
)
GUIDED_TEMPLATE = (
    "Question: {question}\n\n"
    "Hint: {hint}\n\n"
    "Given the partial reference solution known to be correct as hints, derive your "
    "solution to the question. You must solve it by yourself, and may follow the "
    "ideas in the hint. Please reason step by step, and put your final answer "
    "within $boxed{{}}$."
)


class RolloutError(RuntimeError):
    """A backend failed part-way through a group."""

    def __init__(self, message: str, received: int = 0):
        super().__init__(message)
        self.received = received


# --- sentences and hints --------------------------------------------------

_DISPLAY_OPEN = ("\\[", "$$")


def _sentence_spans(text: str) -> list[tuple[int, int]]:
    """(start, end) offsets of sentences, ignoring punctuation inside math."""
    spans: list[tuple[int, int]] = []
    n = len(text)
    start = None
    stack: list[str] = []  # open math delimiters, innermost last
    i = 0

    def close(end: int):
        nonlocal start
        if start is not None and text[start:end].strip():
            spans.append((start, end))
        start = None

    while i < n:
        ch = text[i]
        if start is None and not ch.isspace():
            start = i
        if stack:
            top = stack[-1]
            if top == "{":
                if ch == "{":
                    stack.append("{")
                elif ch == "}":
                    stack.pop()
            elif top == "$$" and text.startswith("$$", i):
                stack.pop()
                i += 2
                if not stack and _line_ends_after(text, i):
                    close(i)
                continue
            elif top == "$" and ch == "$":
                stack.pop()
            elif top == "\\(" and text.startswith("\\)", i):
                stack.pop()
                i += 2
                continue
            elif top == "\\[" and text.startswith("\\]", i):
                stack.pop()
                i += 2
                if not stack and _line_ends_after(text, i):
                    close(i)
                continue
            elif top != "{" and text.startswith("\\boxed{", i):
                stack.append("{")
                i += len("\\boxed{")
                continue
            i += 1
            continue
        # outside math
        if text.startswith("\\boxed{", i):
            stack.append("{")
            i += len("\\boxed{")
            continue
        for opener in ("$$", "\\[", "\\(", "$"):
            if text.startswith(opener, i):
                if opener in _DISPLAY_OPEN and _line_starts_before(text, i) and start is not None and start < i:
                    close(i)
                    start = i
                stack.append(opener)
                i += len(opener)
                break
        else:
            if ch in ".!?" and (i + 1 == n or text[i + 1].isspace()):
                close(i + 1)
            i += 1
    close(n)
    return spans


def _line_starts_before(text: str, i: int) -> bool:
    j = text.rfind("\n", 0, i)
    return text[j + 1 : i].strip() == "" and j >= 0


def _line_ends_after(text: str, i: int) -> bool:
    j = text.find("\n", i)
    rest = text[i:] if j < 0 else text[i:j]
    return rest.strip() == ""


def split_sentences(reference_solution: str) -> list[str]:
    return [reference_solution[a:b].strip() for a, b in _sentence_spans(reference_solution)]


@dataclass(frozen=True)
class HintSpec:
    fraction: float = 0.8
    minimum_sentences: int = 1

    def __post_init__(self):
        if not 0 < self.fraction <= 1:
            raise ValueError(f"hint fraction must be in (0, 1], got {self.fraction}")
        if self.minimum_sentences < 1:
            raise ValueError("minimum_sentences must be >= 1")

    def kept(self, total: int) -> int:
        # the small epsilon keeps floor(0.8 * 5) at 4 despite binary rounding
        return min(total, max(self.minimum_sentences, math.floor(self.fraction * total + 1e-9)))


def build_hint(reference_solution: str, spec: HintSpec = HintSpec()) -> str:
    spans = _sentence_spans(reference_solution)
    if not spans:
        return ""
    k = spec.kept(len(spans))
    return reference_solution[spans[0][0] : spans[k - 1][1]]


def build_prompt(problem: Problem, mode: str = "standard", hint: Optional[str] = None) -> str:
    if not problem.question.strip():
        raise ValueError(f"problem {problem.id}: empty question")
    if mode == "standard":
        return STANDARD_TEMPLATE.format(question=problem.question)
    if mode == "guided":
        if not hint:
            raise ValueError("guided prompt requires a hint")
        return GUIDED_TEMPLATE.format(question=problem.question, hint=hint)
    raise ValueError(f"unknown mode {mode!r}")


def hint_reveals_answer(hint: str, gold_answer: str) -> bool:
    boxed = extract_boxed(hint)
    return boxed is not None and answers_match(boxed, gold_answer)


# --- backends -------------------------------------------------------------


@dataclass
class Completion:
    text: str
    tokens: list[int] = field(default_factory=list)
    token_logprobs: list[float] = field(default_factory=list)
    finished: bool = True


class Backend(Protocol):
    def generate(
        self, prompts: Sequence[str], decode: DecodeConfig, seeds: Sequence[int]
    ) -> list[Completion]: ...


def encode_prompt(prompt_text: str) -> list[int]:
    return [vocab.BOS_ID] + vocab.encode(prompt_text)


class ToyBackend:
    """Samples from a :class:`PolicyParams` over the synthetic vocabulary."""

    def __init__(self, params: PolicyParams, workers: int = 1, chunk_size: int = 512):
        self.params = params
        self.workers = workers
        self.chunk_size = chunk_size

    def generate(self, prompts, decode, seeds):
        cache: dict[str, list[int]] = {}
        encoded = [cache[p] if p in cache else cache.setdefault(p, encode_prompt(p)) for p in prompts]
        results = sample_batch(
            self.params, encoded, decode, list(seeds),
            chunk_size=self.chunk_size, workers=self.workers,
        )
        return [
            Completion(vocab.decode(r.tokens), r.tokens, r.token_logprobs, r.finished)
            for r in results
        ]


# --- grouped sampling -----------------------------------------------------


def derive_seed(run_seed: int, problem_id: str, sample_index: int, *salt) -> int:
    key = ":".join(str(x) for x in (run_seed, problem_id, sample_index, *salt))
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little") >> 1


@dataclass
class GuidedDiagnostics:
    """Counts guided prompts whose hint already contains the boxed gold answer."""

    prompts: int = 0
    answer_in_hint: int = 0


def _to_trajectory(problem: Problem, comp: Completion, mode: str) -> Trajectory:
    verdict = verify(comp.text, problem.gold_answer)
    # overlong (truncated) completions never earn reward
    reward = verdict.reward if comp.finished else 0
    return Trajectory(
        problem_id=problem.id,
        text=comp.text,
        tokens=list(comp.tokens),
        token_logprobs=list(comp.token_logprobs),
        mode=mode,
        reward=reward,
        extracted_answer=verdict.extracted_answer,
    )


def sample_groups(
    backend: Backend,
    problems: Sequence[Problem],
    mode: str,
    group_size: int,
    decode: DecodeConfig,
    seed: int,
    hint_spec: HintSpec = HintSpec(),
    rollout_step: int = 0,
    diagnostics: Optional[GuidedDiagnostics] = None,
) -> list[TrajectoryGroup]:
    """One group of ``group_size`` verified trajectories per problem.

    All prompts go to the backend in one call so the toy policy can batch
    them; seeds are derived per (problem, sample index), so the result does not
    depend on batching.
    """
    if group_size < 2:
        raise ValueError(f"group size must be >= 2, got {group_size}")
    prompts, seeds = [], []
    for p in problems:
        hint = build_hint(p.reference_solution, hint_spec) if mode == "guided" else None
        if diagnostics is not None and hint is not None:
            diagnostics.prompts += 1
            diagnostics.answer_in_hint += hint_reveals_answer(hint, p.gold_answer)
        text = build_prompt(p, mode, hint)
        for i in range(group_size):
            prompts.append(text)
            seeds.append(derive_seed(seed, p.id, i, rollout_step, mode))
    if not prompts:
        return []
    try:
        completions = backend.generate(prompts, decode, seeds)
    except RolloutError:
        raise
    except Exception as exc:
        raise RolloutError(f"backend failed: {exc}", received=0) from exc
    if len(completions) != len(prompts):
        raise RolloutError(
            f"backend returned {len(completions)} of {len(prompts)} completions",
            received=len(completions),
        )
    groups = []
    for j, p in enumerate(problems):
        chunk = completions[j * group_size : (j + 1) * group_size]
        groups.append(
            TrajectoryGroup(p.id, [_to_trajectory(p, c, mode) for c in chunk], rollout_step)
        )
    return groups


def sample_group(
    backend: Backend,
    problem: Problem,
    mode: str,
    group_size: int,
    decode: DecodeConfig,
    seed: int,
    hint_spec: HintSpec = HintSpec(),
    rollout_step: int = 0,
) -> TrajectoryGroup:
    return sample_groups(
        backend, [problem], mode, group_size, decode, seed, hint_spec, rollout_step
    )[0]
