from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from regft.verifier import extract_boxed, parse_rational, verify


@pytest.mark.parametrize(
    "text, expected",
    [
        ("so \\boxed{42}.", "42"),
        ("\\boxed{\\frac{1}{2}} then \\boxed{7}", "7"),
        ("no answer given", None),
        ("\\boxed{\\frac{1}{2}}", "\\frac{1}{2}"),
        ("\\boxed {5}", "5"),
        ("\\boxed{3} and later \\boxed{1", None),  # unbalanced last box fails closed
    ],
)
def test_extract_boxed(text, expected):
    assert extract_boxed(text) == expected


def test_exact_match():
    v = verify("\\boxed{42}", "42")
    assert (v.reward, v.extracted_answer, v.failure_reason) == (1, "42", None)


def test_rational_equivalence():
    # independent check of the arithmetic the verifier relies on
    assert Fraction(1, 2) == Fraction("0.5")
    assert verify("\\boxed{1/2}", "0.5").reward == 1


def test_no_box():
    v = verify("final answer 42, no box", "42")
    assert v.reward == 0 and v.failure_reason == "no_boxed"


def test_mismatch():
    v = verify("\\boxed{41}", "42")
    assert (v.reward, v.failure_reason, v.extracted_answer) == (0, "mismatch", "41")


def test_dollar_and_whitespace_stripped():
    assert verify("\\boxed{ $7$ }", "7").reward == 1


def test_non_numeric_exact_string():
    assert verify("\\boxed{x+1}", "x+1").reward == 1
    assert verify("\\boxed{x + 1}", "x+1").reward == 0


def test_empty_gold_rejected():
    with pytest.raises(ValueError):
        verify("\\boxed{1}", "")


def test_parse_rational_rejects_junk():
    assert parse_rational("1/0") is None
    assert parse_rational("abc") is None
    assert parse_rational("-3/4") == Fraction(-3, 4)


fractions = st.fractions(max_denominator=50).filter(lambda f: abs(f) < 1000)


@given(fractions)
def test_numeric_symmetry(f):
    a = f"{f.numerator}/{f.denominator}"
    b = str(f.numerator) if f.denominator == 1 else a
    first = verify(f"\\boxed{{{a}}}", b)
    assert first.reward == 1
    assert verify(f"\\boxed{{{b}}}", first.extracted_answer).reward == 1


@given(st.text(max_size=40), st.text(min_size=1, max_size=5).filter(str.strip))
def test_total_and_binary(text, gold):
    v = verify(text, gold)
    assert v.reward in (0, 1)
    assert (v.reward == 1) == (v.failure_reason is None)
    assert verify(text, gold) == v
