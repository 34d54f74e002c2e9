import pytest

from regft import synthenv, vocab
from regft.rollout import split_sentences
from regft.synthenv import Chain, ChainSpec, SpecError


def brute_force_answer(question: str) -> int:
    """Evaluate the chain by scanning words, independent of the generator."""
    words = question.replace(".", " ").replace("?", " ").replace(":", " ").split()
    value = int(words[words.index("with") + 1])
    modulus = int(words[-1])
    for i, w in enumerate(words):
        if w == "add":
            value = value + int(words[i + 1])
        elif w == "multiply":
            value = value * int(words[i + 2])
    return value % modulus


def test_one_step_chain():
    p = synthenv.chain_problem(Chain(3, (("add", 5),), 97), "x")
    assert p.gold_answer == "8"
    assert p.question == "Start with 3. Step 1: add 5. What is the result mod 97?"
    assert len(split_sentences(p.reference_solution)) == 2


def test_deterministic_in_seed():
    spec = ChainSpec(97, 3, seed=7)
    assert synthenv.generate_problem(spec) == synthenv.generate_problem(spec)


@pytest.mark.parametrize("seed", range(25))
def test_gold_matches_brute_force(seed):
    p = synthenv.generate_problem(ChainSpec(97, 4, seed))
    assert int(p.gold_answer) == brute_force_answer(p.question)


@pytest.mark.parametrize("L", [1, 2, 4, 8, 12])
def test_reference_has_l_plus_one_sentences(L):
    p = synthenv.generate_problem(ChainSpec(7, L, seed=L))
    assert len(split_sentences(p.reference_solution)) == L + 1


@pytest.mark.parametrize(
    "spec", [ChainSpec(4, 2, 0), ChainSpec(2, 2, 0), ChainSpec(1009, 2, 0), ChainSpec(7, 0, 0)]
)
def test_invalid_spec(spec):
    with pytest.raises(SpecError):
        synthenv.generate_problem(spec)


def test_corpus_reproducible_and_sized():
    a = synthenv.generate_corpus(100, {2: 0.5, 8: 0.5}, seed=1)
    assert a == synthenv.generate_corpus(100, {2: 0.5, 8: 0.5}, seed=1)
    assert len(a) == 100
    assert [p.id for p in a[:3]] == ["syn-0", "syn-1", "syn-2"]
    assert {synthenv.chain_length(p) for p in a} == {2, 8}


def test_empty_corpus():
    assert synthenv.generate_corpus(0, {2: 1.0}, seed=1) == []


def test_degenerate_distribution():
    corpus = synthenv.generate_corpus(30, [(2, 1.0)], seed=3)
    assert all(synthenv.chain_length(p) == 2 for p in corpus)


def test_nonpositive_weight():
    with pytest.raises(SpecError):
        synthenv.generate_corpus(3, {2: 0.0, 3: 1.0}, seed=1)


def test_parse_question_round_trip():
    chain = synthenv.draw_chain(ChainSpec(7, 6, 11))
    assert synthenv.parse_question(synthenv.render_question(chain)) == chain


def test_texts_tokenize_and_round_trip():
    for p in synthenv.generate_corpus(20, {1: 1, 9: 1, 12: 1}, seed=2, modulus=97):
        chain = synthenv.parse_question(p.question)
        for text in (p.question, p.reference_solution, synthenv.worked_solution(chain)):
            assert vocab.decode(vocab.encode(text)) == text


def test_vocab_is_small():
    assert vocab.VOCAB_SIZE <= 48
