"""Fixed token vocabulary for the synthetic chain environment.

Tokens are whole phrases (``"multiply by"``, ``"the value is"``) or single
digits. Multi-digit numbers are written as consecutive digit tokens. The two
prompt instructions are single tokens so that a full prompt built from the
templates in :mod:`regft.rollout` encodes to a short sequence.
"""

from __future__ import annotations

import re

STANDARD_INSTRUCTION = (
    "Please reason step by step, and put your final answer within $boxed{}$."
)
GUIDED_INSTRUCTION = (
    "Given the partial reference solution known to be correct as hints, derive "
    "your solution to the question. You must solve it by yourself, and may "
    "follow the ideas in the hint. " + STANDARD_INSTRUCTION
)

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
DIGITS = [str(i) for i in range(10)]
PHRASES = [
    "Question:",
    "Hint:",
    STANDARD_INSTRUCTION,
    GUIDED_INSTRUCTION,
    "Start with",
    "Step",
    "step",
    "After",
    "Then",
    "add",
    "multiply by",
    "gives",
    "the value is",
    "What is the result mod",
    "The final answer is",
    "\\boxed{",
    "}",
    ":",
    ".",
    "?",
]

TOKENS: list[str] = [PAD, BOS, EOS, *DIGITS, *PHRASES]
TOKEN_ID: dict[str, int] = {t: i for i, t in enumerate(TOKENS)}
VOCAB_SIZE = len(TOKENS)

PAD_ID = TOKEN_ID[PAD]
BOS_ID = TOKEN_ID[BOS]
EOS_ID = TOKEN_ID[EOS]
DIGIT_IDS = [TOKEN_ID[d] for d in DIGITS]

_NO_SPACE_BEFORE = {".", ":", "?", "}"}
_NO_SPACE_AFTER = {"\\boxed{"}

# Longest phrase first so that e.g. the guided instruction wins over the
# standard one it ends with.
_PATTERN = re.compile(
    "|".join(re.escape(p) for p in sorted(PHRASES, key=len, reverse=True)) + r"|\d"
)


class TokenizeError(ValueError):
    """Raised when text contains material outside the vocabulary."""


def encode(text: str) -> list[int]:
    """Tokenize ``text``; whitespace between tokens is ignored."""
    ids: list[int] = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _PATTERN.match(text, pos)
        if m is None:
            raise TokenizeError(f"untokenizable text at offset {pos}: {text[pos:pos + 20]!r}")
        ids.append(TOKEN_ID[m.group(0)])
        pos = m.end()
    return ids


def _glues(prev: str, tok: str) -> bool:
    return tok in _NO_SPACE_BEFORE or prev in _NO_SPACE_AFTER or (tok.isdigit() and prev.isdigit())


_SEP = [["" if _glues(a, b) else " " for b in TOKENS] for a in TOKENS]
_SPECIAL_IDS = frozenset((PAD_ID, BOS_ID, EOS_ID))


def decode(ids) -> str:
    """Render token ids back to canonical text. Special tokens are dropped."""
    out: list[str] = []
    prev = -1
    for i in ids:
        i = int(i)
        if i in _SPECIAL_IDS:
            continue
        if prev >= 0:
            out.append(_SEP[prev][i])
        out.append(TOKENS[i])
        prev = i
    return "".join(out)


def encode_number(n: int) -> list[int]:
    return [TOKEN_ID[ch] for ch in str(n)]


def can_encode(text: str) -> bool:
    try:
        encode(text)
    except TokenizeError:
        return False
    return True
