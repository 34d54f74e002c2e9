import numpy as np
import pytest

from regft import policy, synthenv
from regft.corpus import Problem
from regft.policy import DecodeConfig
from regft.rollout import (
    Completion,
    GuidedDiagnostics,
    HintSpec,
    RolloutError,
    ToyBackend,
    build_hint,
    build_prompt,
    derive_seed,
    sample_group,
    sample_groups,
    split_sentences,
)
from regft.verifier import verify


def test_split_plain():
    assert split_sentences("A. B. C.") == ["A.", "B.", "C."]


def test_split_ignores_inline_math():
    assert split_sentences("Value is $a.b$ here. Next.") == ["Value is $a.b$ here.", "Next."]


@pytest.mark.parametrize(
    "text, n",
    [
        ("Use \\(x. y\\) now. Done!", 2),
        ("So \\boxed{1. 5} is it. Yes?", 2),
        ("We get\n\\[\na. b\n\\]\nthen stop.", 3),
        ("Is it? Yes! Sure.", 3),
        ("no punctuation at all", 1),
        ("e.g.x stays together. Two.", 2),
    ],
)
def test_split_math_and_punctuation(text, n):
    assert len(split_sentences(text)) == n


def test_split_synthetic_reference():
    p = synthenv.generate_problem(synthenv.ChainSpec(97, 4, seed=2))
    assert len(split_sentences(p.reference_solution)) == 5


def _sentences(n):
    return " ".join(f"S{i}." for i in range(n))


@pytest.mark.parametrize("n, kept", [(10, 8), (5, 4), (1, 1), (2, 1), (4, 3), (9, 7)])
def test_hint_sentence_counts(n, kept):
    hint = build_hint(_sentences(n))
    assert split_sentences(hint) == [f"S{i}." for i in range(kept)]


def test_hint_preserves_whitespace():
    assert build_hint("A.  B.\nC. D. E.") == "A.  B.\nC. D."


def test_hint_minimum_clamp_and_custom_fraction():
    assert HintSpec(0.5, 2).kept(3) == 2
    assert HintSpec(1.0).kept(7) == 7
    with pytest.raises(ValueError):
        HintSpec(0.0)


def test_standard_prompt_bit_exact():
    p = Problem("a", "q", "r.", "1")
    assert build_prompt(p, "standard") == (
        "Question: q\n\nPlease reason step by step, and put your final answer within $boxed{}$."
    )


def test_guided_prompt_bit_exact():
    p = Problem("a", "q", "r.", "1")
    assert build_prompt(p, "guided", "h") == (
        "Question: q\n\nHint: h\n\nGiven the partial reference solution known to be correct "
        "as hints, derive your solution to the question. You must solve it by yourself, and "
        "may follow the ideas in the hint. Please reason step by step, and put your final "
        "answer within $boxed{}$."
    )


def test_prompt_errors():
    with pytest.raises(ValueError):
        build_prompt(Problem("a", "q", "r.", "1"), "guided")
    with pytest.raises(ValueError):
        build_prompt(Problem("a", " ", "r.", "1"), "standard")


def test_seed_derivation_is_stable_and_distinct():
    assert derive_seed(1, "p", 0) == derive_seed(1, "p", 0)
    assert len({derive_seed(1, "p", i) for i in range(100)}) == 100
    assert derive_seed(1, "p", 0) != derive_seed(2, "p", 0)


@pytest.fixture
def backend(small_params):
    return ToyBackend(small_params)


DECODE = DecodeConfig(0.7, 0.9, 24)


def test_group_rerun_identical(backend, chain_problems):
    a = sample_group(backend, chain_problems[0], "standard", 16, DECODE, seed=4)
    b = sample_group(backend, chain_problems[0], "standard", 16, DECODE, seed=4)
    assert a == b
    assert a.size == 16


def test_rewards_match_recomputed_verifier(backend, chain_problems):
    for g in sample_groups(backend, chain_problems, "guided", 8, DECODE, seed=1):
        p = next(q for q in chain_problems if q.id == g.problem_id)
        for t in g.trajectories:
            assert t.mode == "guided"
            assert t.reward in (0, 1)
            finished = bool(t.tokens) and t.tokens[-1] == 2
            assert t.reward == (verify(t.text, p.gold_answer).reward if finished else 0)


def test_worker_count_does_not_change_groups(small_params, chain_problems):
    a = sample_groups(ToyBackend(small_params, workers=1, chunk_size=7), chain_problems, "standard", 4, DECODE, 3)
    b = sample_groups(ToyBackend(small_params, workers=3, chunk_size=7), chain_problems, "standard", 4, DECODE, 3)
    assert a == b


def test_guided_completion_is_generated_not_copied(backend, chain_problems):
    groups = sample_groups(backend, chain_problems, "guided", 16, DECODE, seed=8)
    copies = 0
    total = 0
    for g, p in zip(groups, chain_problems):
        hint = build_hint(p.reference_solution)
        for t in g.trajectories:
            assert len(t.tokens) > 0
            total += 1
            copies += t.text.strip() == hint.strip()
    assert copies / total < 0.05


def test_group_size_must_be_two_or_more(backend, chain_problems):
    with pytest.raises(ValueError):
        sample_group(backend, chain_problems[0], "standard", 1, DECODE, 0)


class _Failing:
    def generate(self, prompts, decode, seeds):
        raise RolloutError("boom", received=5)


class _Short:
    def generate(self, prompts, decode, seeds):
        return [Completion("\\boxed{1}") for _ in prompts[:-2]]


def test_backend_failure_keeps_partial_count(chain_problems):
    with pytest.raises(RolloutError) as info:
        sample_group(_Failing(), chain_problems[0], "standard", 16, DECODE, 0)
    assert info.value.received == 5
    with pytest.raises(RolloutError) as info:
        sample_group(_Short(), chain_problems[0], "standard", 16, DECODE, 0)
    assert info.value.received == 14


class _Echo:
    """Returns the gold answer boxed; lets the hint diagnostic be checked."""

    def generate(self, prompts, decode, seeds):
        return [Completion("\\boxed{3}") for _ in prompts]


def test_truncated_completion_gets_no_reward():
    class Cut:
        def generate(self, prompts, decode, seeds):
            return [Completion("\\boxed{3}", finished=False) for _ in prompts]

    g = sample_group(Cut(), Problem("a", "q", "r.", "3"), "standard", 2, DECODE, 0)
    assert g.rewards == [0, 0]
    assert sample_group(_Echo(), Problem("a", "q", "r.", "3"), "standard", 2, DECODE, 0).rewards == [1, 1]


def test_answer_in_hint_diagnostic():
    leaky = Problem("a", "q", "So \\boxed{3}. Done. Done. Done. Done.", "3")
    clean = Problem("b", "q", "One. Two. \\boxed{3}.", "3")
    diag = GuidedDiagnostics()
    sample_groups(_Echo(), [leaky, clean], "guided", 2, DECODE, 0, diagnostics=diag)
    assert (diag.prompts, diag.answer_in_hint) == (2, 1)


def test_group_of_64(backend, chain_problems):
    g = sample_group(backend, chain_problems[1], "standard", 64, DECODE, seed=0)
    assert g.size == 64
    assert len({tuple(t.tokens) for t in g.trajectories}) > 1
    assert np.isfinite([lp for t in g.trajectories for lp in t.token_logprobs]).all()
