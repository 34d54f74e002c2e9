import json

import pytest

from regft import pipeline
from regft.pipeline import ConfigError, load_config, make_config, paper_group_setting, run_pipeline

TINY = {
    "window": 16, "embed_dim": 4, "hidden_dim": 16, "warmup_n": 300, "warmup_epochs": 1,
    "train_n": 30, "eval_n": 6, "max_tokens": 60, "explore_samples": 16,
    "sft_epochs": 1, "rl_steps": 2, "rl_prompt_batch": 4, "rl_warmup": 1,
    "eval_samples": 4, "passk_problems": 3, "passk_samples": 16, "passk_ks": "1,4,16",
}


def tiny(tmp_path, **extra):
    return make_config({**TINY, "out_dir": str(tmp_path / "run"), **extra})


def test_defaults_validate():
    cfg = make_config()
    assert cfg.profile == "toy"
    assert cfg.rl_config.eps_high == 0.28


def test_paper_profile_constants():
    cfg = make_config({"profile": "paper"})
    d = cfg.decode
    assert (d.temperature, d.top_p, d.max_tokens) == (0.7, 0.9, 16384)
    rl = cfg.rl_config
    assert (rl.eps_low, rl.eps_high, rl.learning_rate, rl.warmup_rollout_steps) == (0.2, 0.28, 1e-6, 20)
    assert (rl.group_size, rl.prompt_batch, rl.minibatch_trajectories, rl.updates_per_rollout) == (16, 512, 2048, 4)
    assert (cfg.hard_threshold, cfg.classify_samples, cfg.hint_fraction) == (0.25, 16, 0.8)
    g64 = paper_group_setting(cfg, 64)
    assert (g64.rl_group_size, g64.rl_prompt_batch) == (64, 128)
    assert g64.rl_prompt_batch * g64.rl_group_size / g64.rl_minibatch == 4


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nseed = 5\nrl_lr = 0.01  # inline\n\ntrain_lengths = 3:1\n")
    cfg = load_config(path, {"seed": "7"})
    assert (cfg.seed, cfg.rl_lr, cfg.train_lengths) == (7, 0.01, "3:1")


def test_unknown_key_is_named(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("seed = 1\nlearning_rat = 3\n")
    with pytest.raises(ConfigError, match="learning_rat"):
        load_config(path)
    with pytest.raises(ConfigError, match="nope"):
        make_config({"nope": 1})


@pytest.mark.parametrize(
    "key, value",
    [("seed", "abc"), ("top_p", "2"), ("rl_eps_low", "0.5"), ("dtype", "int8"), ("passk_ks", "1,999")],
)
def test_invalid_values(key, value):
    with pytest.raises(ConfigError):
        make_config({key: value})


def test_dump_round_trips(tmp_path):
    cfg = make_config({"seed": 3, "profile": "paper"})
    path = tmp_path / "dump.cfg"
    path.write_text(cfg.dump())
    assert load_config(path) == cfg


def test_env_output_root(monkeypatch, tmp_path):
    monkeypatch.setenv(pipeline.OUTPUT_ROOT_ENV, str(tmp_path))
    assert pipeline.default_out_dir("x") == str(tmp_path / "x")


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    cfg = tiny(root)
    ctx = run_pipeline(cfg)
    return cfg, ctx


def test_pipeline_outputs(finished_run):
    cfg, ctx = finished_run
    out = ctx.out
    for rel in ("metrics.csv", "passk.csv", "difficulty.jsonl", "overlap.json", "sft/regft.jsonl",
                "rl/regft_steps.jsonl", "checkpoints/regft_rl.npz", "config.txt"):
        assert (out / rel).exists(), rel
    metrics = (out / "metrics.csv").read_text().splitlines()
    assert metrics[0] == "step,split,metric,value"
    for init in pipeline.INITS:
        assert any(f",eval,{init}/pass@1," in line for line in metrics)
    assert set(json.loads((out / "overlap.json").read_text())) >= {"only_guided", "only_standard"}


def test_resume_skips_completed_stages(finished_run):
    cfg, ctx = finished_run
    again = run_pipeline(cfg, resume=True)
    assert all(t == 0.0 for t in again.timings.values())


def test_resume_reruns_changed_and_downstream_stages(finished_run, tmp_path):
    import shutil

    cfg, ctx = finished_run
    copy = tmp_path / "copy"
    shutil.copytree(ctx.out, copy)
    changed = make_config({**cfg.to_dict(), "out_dir": str(copy), "rl_steps": 1})
    again = run_pipeline(changed, resume=True)
    assert again.timings["sft"] == 0.0
    assert again.timings["rl"] > 0.0 and again.timings["evaluate"] > 0.0


def test_tampered_output_is_recomputed(finished_run, tmp_path):
    import shutil

    cfg, ctx = finished_run
    copy = tmp_path / "copy"
    shutil.copytree(ctx.out, copy)
    (copy / "overlap.json").write_text("{}")
    again = run_pipeline(make_config({**cfg.to_dict(), "out_dir": str(copy)}), resume=True)
    assert again.timings["explore"] > 0.0
    assert (copy / "overlap.json").read_bytes() == (ctx.out / "overlap.json").read_bytes()


def test_until_stops_early(tmp_path):
    ctx = run_pipeline(tiny(tmp_path), until="classify")
    assert list(ctx.timings) == ["data", "warmup", "classify"]
    assert not (ctx.out / "metrics.csv").exists()


def test_stage_failure_names_stage(tmp_path):
    cfg = tiny(tmp_path, train_corpus=str(tmp_path / "missing.jsonl"))
    with pytest.raises(pipeline.StageError, match="data"):
        run_pipeline(cfg)


def test_remote_backend_rejected_for_pipeline(tmp_path):
    with pytest.raises(ConfigError):
        run_pipeline(tiny(tmp_path, backend="remote", endpoint="http://x"))


def test_identical_bytes_across_worker_counts(finished_run, tmp_path):
    cfg, ctx = finished_run
    other = run_pipeline(make_config({**cfg.to_dict(), "out_dir": str(tmp_path / "w3"), "workers": 3}))
    for rel in ("metrics.csv", "passk.csv", "difficulty.jsonl", "sft/reft.jsonl", "sft/regft.jsonl",
                "sft/direct.jsonl", "data/train.jsonl"):
        assert (ctx.out / rel).read_bytes() == (other.out / rel).read_bytes(), rel
