"""Synthetic verifiable problems: modular add/multiply chains.

A chain starts from a value ``v0`` and applies ``L`` operations modulo a
prime ``M``. The reference solution lists every intermediate value as its own
sentence and then boxes the final value, so the reference always has
``L + 1`` sentences.

Besides the terse reference, :func:`worked_solution` renders the same chain in
a more explicit style that restates every operation before its result. That
style is what the toy policy is warmed up on, so it plays the role of the
model's own way of reasoning, distinct from the human-written reference.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .corpus import Problem

ADD, MUL = "add", "multiply"


class SpecError(ValueError):
    pass


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    return all(n % p for p in range(2, int(n**0.5) + 1))


@dataclass(frozen=True)
class ChainSpec:
    modulus: int = 97
    chain_length: int = 1
    seed: int = 0

    def validate(self) -> None:
        if not (2 < self.modulus < 1000 and _is_prime(self.modulus)):
            raise SpecError(f"modulus must be a prime in (2, 1000), got {self.modulus}")
        if self.chain_length < 1:
            raise SpecError(f"chain_length must be >= 1, got {self.chain_length}")


@dataclass(frozen=True)
class Chain:
    start: int
    ops: tuple[tuple[str, int], ...]
    modulus: int

    def values(self) -> list[int]:
        """Intermediate values v_1..v_L."""
        out, v = [], self.start
        for op, a in self.ops:
            v = (v + a) % self.modulus if op == ADD else (v * a) % self.modulus
            out.append(v)
        return out

    @property
    def answer(self) -> int:
        vals = self.values()
        return vals[-1] if vals else self.start


def draw_chain(spec: ChainSpec) -> Chain:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    m = spec.modulus
    start = int(rng.integers(0, m))
    ops = []
    for _ in range(spec.chain_length):
        if rng.random() < 0.5:
            ops.append((ADD, int(rng.integers(1, m))))
        else:
            ops.append((MUL, int(rng.integers(2, m))))
    return Chain(start, tuple(ops), m)


def render_question(chain: Chain) -> str:
    parts = [f"Start with {chain.start}."]
    for i, (op, a) in enumerate(chain.ops, start=1):
        verb = "add" if op == ADD else "multiply by"
        parts.append(f"Step {i}: {verb} {a}.")
    parts.append(f"What is the result mod {chain.modulus}?")
    return " ".join(parts)


def render_reference(chain: Chain) -> str:
    vals = chain.values()
    parts = [f"After step {i} the value is {v}." for i, v in enumerate(vals, start=1)]
    parts.append(f"The final answer is \\boxed{{{chain.answer}}}.")
    return " ".join(parts)


def worked_solution(chain: Chain) -> str:
    """Step-by-step solution that restates each operation before its result."""
    parts = [f"Start with {chain.start}."]
    for (op, a), v in zip(chain.ops, chain.values()):
        verb = "add" if op == ADD else "multiply by"
        parts.append(f"Then {verb} {a} gives {v}.")
    parts.append(f"The final answer is \\boxed{{{chain.answer}}}.")
    return " ".join(parts)


def chain_problem(chain: Chain, problem_id: str) -> Problem:
    return Problem(
        id=problem_id,
        question=render_question(chain),
        reference_solution=render_reference(chain),
        gold_answer=str(chain.answer),
    )


def generate_problem(spec: ChainSpec, problem_id: str | None = None) -> Problem:
    chain = draw_chain(spec)
    pid = problem_id or f"chain-m{spec.modulus}-l{spec.chain_length}-s{spec.seed}"
    return chain_problem(chain, pid)


_Q_START = re.compile(r"Start with (\d+)\.")
_Q_STEP = re.compile(r"Step (\d+): (add|multiply by) (\d+)\.")
_Q_MOD = re.compile(r"What is the result mod (\d+)\?")


def parse_question(question: str) -> Chain:
    """Recover the chain from question text produced by :func:`render_question`."""
    m0, mm = _Q_START.search(question), _Q_MOD.search(question)
    if m0 is None or mm is None:
        raise SpecError(f"not a chain question: {question[:60]!r}")
    ops = []
    for k, m in enumerate(_Q_STEP.finditer(question), start=1):
        if int(m.group(1)) != k:
            raise SpecError(f"step {m.group(1)} out of order")
        ops.append((ADD if m.group(2) == "add" else MUL, int(m.group(3))))
    return Chain(int(m0.group(1)), tuple(ops), int(mm.group(1)))


def chain_length(problem: Problem) -> int:
    return len(parse_question(problem.question).ops)


def generate_corpus(
    n: int,
    length_distribution,
    seed: int,
    modulus: int = 97,
    id_prefix: str = "syn",
) -> list[Problem]:
    """``n`` problems with chain lengths drawn from ``length_distribution``.

    ``length_distribution`` is a mapping or a sequence of ``(L, weight)`` pairs.
    """
    if n <= 0:
        return []
    pairs = list(length_distribution.items()) if hasattr(length_distribution, "items") else list(length_distribution)
    if not pairs:
        raise SpecError("empty length distribution")
    lengths = np.array([int(l) for l, _ in pairs])
    weights = np.array([float(w) for _, w in pairs])
    if np.any(weights <= 0):
        raise SpecError("length weights must be positive")
    rng = np.random.default_rng(seed)
    drawn = rng.choice(lengths, size=n, p=weights / weights.sum())
    problem_seeds = rng.integers(0, 2**31 - 1, size=n)
    return [
        generate_problem(
            ChainSpec(modulus, int(L), int(s)), problem_id=f"{id_prefix}-{i}"
        )
        for i, (L, s) in enumerate(zip(drawn, problem_seeds))
    ]
