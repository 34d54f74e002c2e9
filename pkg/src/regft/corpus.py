"""Problem / trajectory records and their JSONL files."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

MODES = ("standard", "guided")


class CorpusError(ValueError):
    """Malformed or invalid record."""


@dataclass(frozen=True)
class Problem:
    id: str
    question: str
    reference_solution: str
    gold_answer: str

    def __post_init__(self):
        if not self.id:
            raise CorpusError("problem id must be non-empty")
        if not self.reference_solution.strip():
            raise CorpusError(f"problem {self.id}: empty reference_solution")
        if not self.gold_answer.strip():
            raise CorpusError(f"problem {self.id}: empty gold_answer")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "reference_solution": self.reference_solution,
            "gold_answer": self.gold_answer,
        }


@dataclass
class Trajectory:
    """One sampled completion with its verifier reward.

    ``tokens``/``token_logprobs`` may both be empty for text-only trajectories
    from a remote backend.
    """

    problem_id: str
    text: str
    tokens: list[int] = field(default_factory=list)
    token_logprobs: list[float] = field(default_factory=list)
    mode: str = "standard"
    reward: int = 0
    extracted_answer: Optional[str] = None

    def validate(self) -> None:
        if len(self.tokens) != len(self.token_logprobs):
            raise CorpusError(
                f"trajectory for {self.problem_id}: {len(self.tokens)} tokens but "
                f"{len(self.token_logprobs)} logprobs"
            )
        if any(not (lp <= 0.0) or math.isnan(lp) for lp in self.token_logprobs):
            raise CorpusError(f"trajectory for {self.problem_id}: positive or NaN logprob")
        if self.mode not in MODES:
            raise CorpusError(f"unknown mode {self.mode!r}")
        if self.reward not in (0, 1):
            raise CorpusError(f"reward must be 0 or 1, got {self.reward!r}")
        if self.reward == 1 and self.extracted_answer is None:
            raise CorpusError("reward 1 requires an extracted answer")

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "text": self.text,
            "tokens": [int(t) for t in self.tokens],
            "token_logprobs": [float(x) for x in self.token_logprobs],
            "mode": self.mode,
            "reward": int(self.reward),
            "extracted_answer": self.extracted_answer,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        t = cls(
            problem_id=str(d["problem_id"]),
            text=str(d["text"]),
            tokens=[int(x) for x in d.get("tokens") or []],
            token_logprobs=[float(x) for x in d.get("token_logprobs") or []],
            mode=d.get("mode", "standard"),
            reward=int(d["reward"]),
            extracted_answer=d.get("extracted_answer"),
        )
        t.validate()
        return t


@dataclass
class TrajectoryGroup:
    """The G rollouts of one prompt in one rollout step."""

    problem_id: str
    trajectories: list[Trajectory]
    rollout_step: int = 0

    def __post_init__(self):
        for t in self.trajectories:
            if t.problem_id != self.problem_id:
                raise CorpusError(
                    f"group {self.problem_id} contains trajectory for {t.problem_id}"
                )

    @property
    def size(self) -> int:
        return len(self.trajectories)

    @property
    def rewards(self) -> list[int]:
        return [t.reward for t in self.trajectories]

    @property
    def n_correct(self) -> int:
        return sum(self.rewards)


def _read_jsonl(path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, rec


def write_jsonl(path, records: Iterable[dict]) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in records:
                fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=False))
                fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_jsonl(path) -> list[dict]:
    return [rec for _, rec in _read_jsonl(path)]


def load_corpus(path) -> list[Problem]:
    problems: list[Problem] = []
    seen: set[str] = set()
    for lineno, rec in _read_jsonl(path):
        try:
            p = Problem(
                id=str(rec["id"]),
                question=str(rec["question"]),
                reference_solution=str(rec["reference_solution"]),
                gold_answer=str(rec["gold_answer"]),
            )
        except KeyError as exc:
            raise CorpusError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from exc
        except CorpusError as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from exc
        if p.id in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate problem id {p.id!r}")
        seen.add(p.id)
        problems.append(p)
    return problems


def write_corpus(path, problems: list[Problem]) -> None:
    ids = [p.id for p in problems]
    if len(set(ids)) != len(ids):
        raise CorpusError("duplicate problem ids")
    write_jsonl(path, (p.to_dict() for p in problems))


def write_trajectories(path, trajectories: list[Trajectory]) -> None:
    # validate everything before touching the file
    for t in trajectories:
        t.validate()
    write_jsonl(path, (t.to_dict() for t in trajectories))


def load_trajectories(path) -> list[Trajectory]:
    out = []
    for lineno, rec in _read_jsonl(path):
        try:
            out.append(Trajectory.from_dict(rec))
        except KeyError as exc:
            raise CorpusError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from exc
        except CorpusError as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    return out
