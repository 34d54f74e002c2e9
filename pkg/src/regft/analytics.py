"""Pass-rate statistics: pass@k, hard-problem labels, solve-set overlap, CSVs."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import TrajectoryGroup

HARD_THRESHOLD = 0.25
HARD_SAMPLES = 16


@dataclass(frozen=True)
class ProblemStats:
    problem_id: str
    n: int
    c: int
    mode: str = "standard"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"{self.problem_id}: need at least one sample")
        if not 0 <= self.c <= self.n:
            raise ValueError(f"{self.problem_id}: correct count {self.c} outside [0, {self.n}]")


@dataclass(frozen=True)
class DifficultyLabel:
    problem_id: str
    label: str  # "hard" | "not_hard"
    n: int
    c: int
    threshold: float

    @property
    def is_hard(self) -> bool:
        return self.label == "hard"

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "label": self.label,
            "n": self.n,
            "c": self.c,
            "threshold": self.threshold,
        }


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased pass@k from ``c`` correct out of ``n`` samples.

    Uses the running product of (n-c-i)/(n-i) so nothing overflows for large n.
    """
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if not 0 <= c <= n:
        raise ValueError(f"need 0 <= c <= n, got c={c}, n={n}")
    if n - c < k:
        return 1.0
    if c == 0:
        return 0.0
    if k == 1:
        return c / n
    fail = 1.0
    for i in range(k):
        fail *= (n - c - i) / (n - i)
    return 1.0 - fail


def stats_from_groups(groups: Iterable[TrajectoryGroup], mode: str | None = None) -> list[ProblemStats]:
    """Pool all groups per problem (first-seen order)."""
    totals: dict[str, list[int]] = {}
    modes: dict[str, str] = {}
    for g in groups:
        n_c = totals.setdefault(g.problem_id, [0, 0])
        n_c[0] += g.size
        n_c[1] += g.n_correct
        if g.trajectories:
            modes.setdefault(g.problem_id, g.trajectories[0].mode)
    return [
        ProblemStats(pid, n, c, mode or modes.get(pid, "standard"))
        for pid, (n, c) in totals.items()
    ]


def classify_difficulty(
    stats: ProblemStats,
    threshold: float = HARD_THRESHOLD,
    required_samples: int | None = HARD_SAMPLES,
) -> DifficultyLabel:
    """Hard iff the empirical pass rate is strictly below ``threshold``.

    ``required_samples=None`` accepts any sample count.
    """
    if stats.n == 0:
        raise ValueError("cannot classify with zero samples")
    if required_samples is not None and stats.n != required_samples:
        raise ValueError(
            f"{stats.problem_id}: expected {required_samples} samples, got {stats.n}"
        )
    label = "hard" if stats.c / stats.n < threshold else "not_hard"
    return DifficultyLabel(stats.problem_id, label, stats.n, stats.c, threshold)


def hard_ids(labels: Iterable[DifficultyLabel]) -> set[str]:
    return {lab.problem_id for lab in labels if lab.is_hard}


@dataclass(frozen=True)
class OverlapReport:
    n_problems: int
    solved_standard: float
    solved_guided: float
    only_guided: float
    only_standard: float
    both: float
    neither: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def solve_set_overlap(
    standard_stats: Sequence[ProblemStats], guided_stats: Sequence[ProblemStats]
) -> OverlapReport:
    std = {s.problem_id: s.c >= 1 for s in standard_stats}
    gui = {s.problem_id: s.c >= 1 for s in guided_stats}
    if set(std) != set(gui) or len(std) != len(standard_stats) or len(gui) != len(guided_stats):
        raise ValueError("standard and guided stats must cover the same problem ids exactly once")
    n = len(std)
    if n == 0:
        return OverlapReport(0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    counts = defaultdict(int)
    for pid, s in std.items():
        g = gui[pid]
        counts["both" if s and g else "only_standard" if s else "only_guided" if g else "neither"] += 1
    return OverlapReport(
        n_problems=n,
        solved_standard=sum(std.values()) / n,
        solved_guided=sum(gui.values()) / n,
        only_guided=counts["only_guided"] / n,
        only_standard=counts["only_standard"] / n,
        both=counts["both"] / n,
        neither=counts["neither"] / n,
    )


def pass_at_k_table(stats: Sequence[ProblemStats], ks: Sequence[int]) -> list[dict]:
    """Mean pass@k over problems for each k (k larger than a problem's N is skipped)."""
    rows = []
    for k in ks:
        vals = [pass_at_k(s.n, s.c, k) for s in stats if k <= s.n]
        rows.append({
            "k": k,
            "estimate": sum(vals) / len(vals) if vals else float("nan"),
            "N": max((s.n for s in stats), default=0),
            "c_total": sum(s.c for s in stats),
        })
    return rows


METRICS_HEADER = ["step", "split", "metric", "value"]
PASSK_HEADER = ["checkpoint", "k", "estimate", "N", "c_total"]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_metrics(
    out_dir,
    metric_rows: Iterable[Mapping],
    passk_tables: Mapping[str, Sequence[Mapping]] | None = None,
    prefix: str = "",
) -> tuple[Path, Path]:
    """Write ``metrics.csv`` and ``passk.csv`` into ``out_dir``.

    ``metric_rows`` carry step/split/metric/value; rows are written sorted by
    (metric, split, step) so the step column is monotone within each metric.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / f"{prefix}metrics.csv"
    passk_path = out_dir / f"{prefix}passk.csv"
    rows = sorted(metric_rows, key=lambda r: (r["metric"], r["split"], int(r["step"])))
    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([int(r["step"]), r["split"], r["metric"], _fmt(r["value"])])
    with open(passk_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PASSK_HEADER)
        for ckpt, table in (passk_tables or {}).items():
            for r in table:
                w.writerow([ckpt, r["k"], _fmt(r["estimate"]), r["N"], r["c_total"]])
    return metrics_path, passk_path


def read_metrics(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {"step": int(r["step"]), "split": r["split"], "metric": r["metric"], "value": float(r["value"])}
            for r in csv.DictReader(fh)
        ]
