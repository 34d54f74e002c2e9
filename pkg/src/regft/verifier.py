"""Binary answer checking on the last ``\\boxed{...}`` of a completion."""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

_BOXED = "\\boxed"
_RATIONAL = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)(/[+-]?(\d+(\.\d*)?|\.\d+))?$")


@dataclass(frozen=True)
class Verdict:
    reward: int
    extracted_answer: Optional[str] = None
    failure_reason: Optional[str] = None  # "no_boxed" | "mismatch"


def extract_boxed(text: str) -> Optional[str]:
    """Content of the last ``\\boxed{...}`` with balanced braces, else None.

    If the last occurrence is unbalanced we return None rather than falling
    back to an earlier box.
    """
    start = text.rfind(_BOXED)
    if start < 0:
        return None
    i = start + len(_BOXED)
    while i < len(text) and text[i].isspace():
        i += 1
    if i >= len(text) or text[i] != "{":
        return None
    depth = 0
    for j in range(i, len(text)):
        ch = text[j]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[i + 1 : j]
    return None


def canonicalize(answer: str) -> str:
    s = answer.strip()
    if len(s) >= 2 and s.startswith("$") and s.endswith("$"):
        s = s.strip("$").strip()
    return s


def parse_rational(s: str) -> Optional[Fraction]:
    s = s.replace(" ", "")
    if not _RATIONAL.match(s):
        return None
    num, _, den = s.partition("/")
    try:
        value = Fraction(num)
        if den:
            d = Fraction(den)
            if d == 0:
                return None
            value /= d
    except (ValueError, ZeroDivisionError):
        return None
    return value


def answers_match(candidate: str, gold: str) -> bool:
    a, b = canonicalize(candidate), canonicalize(gold)
    fa, fb = parse_rational(a), parse_rational(b)
    if fa is not None and fb is not None:
        return fa == fb
    return a == b


def verify(text: str, gold_answer: str) -> Verdict:
    if not gold_answer.strip():
        raise ValueError("gold_answer must be non-empty")
    extracted = extract_boxed(text)
    if extracted is None:
        return Verdict(0, None, "no_boxed")
    if answers_match(extracted, gold_answer):
        return Verdict(1, extracted, None)
    return Verdict(0, extracted, "mismatch")
