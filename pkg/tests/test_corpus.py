import json

import pytest
from hypothesis import given, strategies as st

from regft.corpus import (
    CorpusError,
    Problem,
    Trajectory,
    TrajectoryGroup,
    load_corpus,
    load_trajectories,
    write_corpus,
    write_trajectories,
)


def _problem(i):
    return Problem(f"p{i}", f"question {i}", f"Reference {i}.", str(i))


def test_load_three_problems_in_order(tmp_path):
    path = tmp_path / "c.jsonl"
    write_corpus(path, [_problem(i) for i in (3, 1, 2)])
    assert [p.id for p in load_corpus(path)] == ["p3", "p1", "p2"]


def test_duplicate_id_rejected(tmp_path):
    path = tmp_path / "c.jsonl"
    rec = _problem(1).to_dict()
    path.write_text(json.dumps(rec) + "\n" + json.dumps(rec) + "\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="duplicate"):
        load_corpus(path)


def test_empty_file(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text("", encoding="utf-8")
    assert load_corpus(path) == []


def test_malformed_line_names_line_number(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(json.dumps(_problem(1).to_dict()) + "\n{not json\n", encoding="utf-8")
    with pytest.raises(CorpusError, match=":2:"):
        load_corpus(path)


def test_missing_field(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"id": "a", "question": "q"}\n', encoding="utf-8")
    with pytest.raises(CorpusError, match="reference_solution"):
        load_corpus(path)


def test_empty_gold_rejected():
    with pytest.raises(CorpusError):
        Problem("a", "q", "ref.", " ")


def _traj(i, reward=1):
    return Trajectory(
        problem_id=f"p{i % 3}",
        text=f"so \\boxed{{{i}}}",
        tokens=[i, i + 1, 2],
        token_logprobs=[-0.5, -1.25, -1e-9],
        mode="guided" if i % 2 else "standard",
        reward=reward,
        extracted_answer=str(i) if reward else None,
    )


def test_trajectory_round_trip(tmp_path):
    trajs = [_traj(i, reward=i % 2) for i in range(10)]
    path = tmp_path / "t.jsonl"
    write_trajectories(path, trajs)
    assert load_trajectories(path) == trajs


def test_empty_trajectory_list_gives_empty_file(tmp_path):
    path = tmp_path / "t.jsonl"
    write_trajectories(path, [])
    assert path.read_text(encoding="utf-8") == ""


def test_mismatched_logprobs_rejected_before_write(tmp_path):
    bad = _traj(0)
    bad.token_logprobs = [-1.0]
    path = tmp_path / "t.jsonl"
    with pytest.raises(CorpusError):
        write_trajectories(path, [_traj(1), bad])
    assert not path.exists()


def test_reward_one_requires_answer():
    t = _traj(0)
    t.extracted_answer = None
    with pytest.raises(CorpusError):
        t.validate()


def test_positive_logprob_rejected():
    t = _traj(0)
    t.token_logprobs = [0.1, -1.0, -1.0]
    with pytest.raises(CorpusError):
        t.validate()


def test_text_only_trajectory_allowed(tmp_path):
    t = Trajectory("p", "remote text \\boxed{1}", mode="standard", reward=1, extracted_answer="1")
    path = tmp_path / "t.jsonl"
    write_trajectories(path, [t])
    assert load_trajectories(path) == [t]


def test_group_rejects_foreign_trajectory():
    with pytest.raises(CorpusError):
        TrajectoryGroup("p0", [_traj(0), _traj(1)])


def test_utf8_without_bom(tmp_path):
    path = tmp_path / "c.jsonl"
    write_corpus(path, [Problem("ü", "Größe?", "Ja.", "1")])
    raw = path.read_bytes()
    assert not raw.startswith(b"\xef\xbb\xbf")
    assert load_corpus(path)[0].question == "Größe?"


text = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=30)


@given(st.lists(st.tuples(text, text, text), max_size=8, unique_by=lambda t: t[0]))
def test_problem_round_trip_property(tmp_path_factory, rows):
    rows = [r for r in rows if r[1].strip() and r[2].strip()]
    problems = [Problem(pid, "q", ref, gold) for pid, ref, gold in rows]
    path = tmp_path_factory.mktemp("rt") / "c.jsonl"
    write_corpus(path, problems)
    assert load_corpus(path) == problems


@given(
    st.lists(
        st.tuples(
            st.lists(st.integers(0, 40), max_size=6),
            st.sampled_from(["standard", "guided"]),
            st.booleans(),
        ),
        max_size=6,
    )
)
def test_trajectory_round_trip_property(tmp_path_factory, rows):
    trajs = [
        Trajectory(
            "p", "t", toks, [-float(i) / 7 for i in range(len(toks))], mode,
            int(ok), "3" if ok else None,
        )
        for toks, mode, ok in rows
    ]
    path = tmp_path_factory.mktemp("rt") / "t.jsonl"
    write_trajectories(path, trajs)
    assert load_trajectories(path) == trajs
