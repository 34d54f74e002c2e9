"""End-to-end experiment: raw policy -> hard set -> SFT datasets -> four RL runs.

Each stage writes its outputs under the run directory together with a
manifest recording a hash of its inputs (config values and upstream files).
With ``resume`` a stage whose manifest matches is skipped.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import analytics, dapo, sft, synthenv, vocab
from .corpus import (
    Problem,
    TrajectoryGroup,
    load_corpus,
    load_trajectories,
    read_jsonl,
    write_corpus,
    write_jsonl,
    write_trajectories,
)
from .policy import (
    Architecture,
    DecodeConfig,
    PolicyParams,
    init_params,
    load_params,
    save_params,
)
from .rollout import HintSpec, ToyBackend, build_hint, build_prompt, encode_prompt, sample_groups

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "REGFT_OUTPUT_ROOT"
INITS = ("raw", "reft", "regft", "direct")


class ConfigError(ValueError):
    """Unknown key or invalid value in a run configuration."""


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


def _parse_lengths(text: str) -> dict[int, float]:
    out = {}
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        length, _, weight = part.partition(":")
        out[int(length)] = float(weight) if weight else 1.0
    if not out:
        raise ConfigError("empty length distribution")
    return out


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).split(",") if x.strip())


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a pipeline run. ``profile`` selects the defaults."""

    profile: str = "toy"
    seed: int = 0
    out_dir: str = ""  # empty -> $REGFT_OUTPUT_ROOT/pipeline
    workers: int = 1
    backend: str = "toy"
    endpoint: str = ""

    # corpora; empty paths mean "generate synthetic problems"
    train_corpus: str = ""
    eval_corpus: str = ""
    modulus: int = 7
    train_n: int = 1000
    train_lengths: str = "2:0.5,8:0.5"
    eval_n: int = 200
    eval_lengths: str = "8:1"

    # the raw policy is a small model warmed up on worked solutions
    window: int = 100
    embed_dim: int = 8
    hidden_dim: int = 64
    dtype: str = "float32"
    warmup_n: int = 10000
    warmup_lengths: str = "1:1,2:1,3:1,4:1,8:1"
    warmup_guided_fraction: float = 0.33
    warmup_epochs: int = 2
    warmup_lr: float = 3e-3
    warmup_batch: int = 8

    temperature: float = 0.7
    top_p: float = 0.9
    max_tokens: int = 100

    hint_fraction: float = 0.8
    hint_min_sentences: int = 1
    classify_samples: int = 16
    hard_threshold: float = 0.25
    explore_samples: int = 64

    sft_cap: int = 4
    sft_epochs: int = 3
    sft_lr: float = 1e-3
    sft_batch: int = 32
    sft_weight_decay: float = 0.01

    rl_steps: int = 30
    rl_lr: float = 1e-3
    rl_warmup: int = 5
    rl_group_size: int = 16
    rl_prompt_batch: int = 64
    rl_minibatch: int = 2048
    rl_updates: int = 4
    rl_eps_low: float = 0.2
    rl_eps_high: float = 0.28
    rl_resample_budget: int = -1  # negative -> 4 * prompt batch

    eval_samples: int = 16
    eval_every: int = 0
    passk_problems: int = 200
    passk_samples: int = 256
    passk_ks: str = "1,4,16,64"

    @property
    def decode(self) -> DecodeConfig:
        return DecodeConfig(self.temperature, self.top_p, self.max_tokens)

    @property
    def hint(self) -> HintSpec:
        return HintSpec(self.hint_fraction, self.hint_min_sentences)

    @property
    def arch(self) -> Architecture:
        return Architecture(vocab.VOCAB_SIZE, self.window, self.embed_dim, self.hidden_dim)

    @property
    def sft_config(self) -> sft.SftConfig:
        return sft.SftConfig(self.sft_epochs, self.sft_lr, self.sft_batch, weight_decay=self.sft_weight_decay)

    @property
    def rl_config(self) -> dapo.RlConfig:
        return dapo.RlConfig(
            eps_low=self.rl_eps_low,
            eps_high=self.rl_eps_high,
            learning_rate=self.rl_lr,
            warmup_rollout_steps=self.rl_warmup,
            group_size=self.rl_group_size,
            prompt_batch=self.rl_prompt_batch,
            minibatch_trajectories=self.rl_minibatch,
            updates_per_rollout=self.rl_updates,
            resample_budget=None if self.rl_resample_budget < 0 else self.rl_resample_budget,
        )

    def validate(self) -> None:
        if self.profile not in PROFILES:
            raise ConfigError(f"profile: unknown profile {self.profile!r}")
        if self.backend not in ("toy", "remote"):
            raise ConfigError(f"backend: expected toy or remote, got {self.backend!r}")
        if self.backend == "remote" and not self.endpoint:
            raise ConfigError("endpoint: required for the remote backend")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype: expected float32 or float64, got {self.dtype!r}")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        for name in ("train_lengths", "eval_lengths", "warmup_lengths"):
            try:
                _parse_lengths(getattr(self, name))
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from exc
        try:
            ks = _parse_ints(self.passk_ks)
        except ValueError as exc:
            raise ConfigError(f"passk_ks: {exc}") from exc
        if ks and max(ks) > self.passk_samples:
            raise ConfigError("passk_ks: k larger than passk_samples")
        try:
            self.decode.validate()
        except ValueError as exc:
            raise ConfigError(f"decode: {exc}") from exc
        try:
            self.hint
        except ValueError as exc:
            raise ConfigError(f"hint_fraction: {exc}") from exc
        try:
            self.rl_config.validate()
        except ValueError as exc:
            raise ConfigError(f"rl: {exc}") from exc

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())


# Values set by each profile on top of the dataclass defaults.
PROFILES: dict[str, dict] = {
    "toy": {},
    "paper": {
        "temperature": 0.7,
        "top_p": 0.9,
        "max_tokens": 16384,
        "hint_fraction": 0.8,
        "classify_samples": 16,
        "hard_threshold": 0.25,
        "explore_samples": 64,
        "rl_group_size": 16,
        "rl_prompt_batch": 512,
        "rl_minibatch": 2048,
        "rl_updates": 4,
        "rl_eps_low": 0.2,
        "rl_eps_high": 0.28,
        "rl_lr": 1e-6,
        "rl_warmup": 20,
        "passk_samples": 1024,
    },
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from exc


def paper_group_setting(config: RunConfig, group_size: int) -> RunConfig:
    """Switch between the 16-response and 64-response settings of the paper profile."""
    pairs = {16: 512, 64: 128}
    if group_size not in pairs:
        raise ConfigError("rl_group_size: the paper profile defines 16 and 64 only")
    return dataclasses.replace(config, rl_group_size=group_size, rl_prompt_batch=pairs[group_size])


def make_config(overrides: Optional[dict] = None, file_values: Optional[dict] = None) -> RunConfig:
    """Profile defaults, then file values, then explicit overrides."""
    merged = dict(file_values or {})
    merged.update(overrides or {})
    profile = str(merged.get("profile", "toy"))
    if profile not in PROFILES:
        raise ConfigError(f"profile: unknown profile {profile!r}")
    values = dict(PROFILES[profile])
    values.update(merged)
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in values.items()})
    cfg.validate()
    return cfg


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = value.strip()
    return out


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    return make_config(overrides, parse_config_text(text, str(path)))


def default_out_dir(name: str = "default") -> str:
    return str(Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / name)


# --- stage bookkeeping ----------------------------------------------------


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class Stage:
    name: str
    keys: tuple[str, ...]
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    run: Callable[["Context"], None]


@dataclass
class Context:
    config: RunConfig
    out: Path
    timings: dict[str, float] = field(default_factory=dict)

    def path(self, rel: str) -> Path:
        return self.out / rel


def _input_hash(ctx: Context, stage: Stage) -> str:
    doc = {
        "stage": stage.name,
        "config": {k: getattr(ctx.config, k) for k in stage.keys},
        "inputs": {rel: file_digest(ctx.path(rel)) for rel in stage.inputs},
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _manifest_path(ctx: Context, stage: Stage) -> Path:
    return ctx.out / "manifests" / f"{stage.name}.json"


def _is_complete(ctx: Context, stage: Stage, digest: str) -> bool:
    mpath = _manifest_path(ctx, stage)
    if not mpath.exists():
        return False
    doc = json.loads(mpath.read_text(encoding="utf-8"))
    if doc.get("input_hash") != digest:
        return False
    for rel, h in doc.get("outputs", {}).items():
        p = ctx.path(rel)
        if not p.exists() or file_digest(p) != h:
            return False
    return True


def _write_manifest(ctx: Context, stage: Stage, digest: str) -> None:
    doc = {
        "stage": stage.name,
        "input_hash": digest,
        "outputs": {rel: file_digest(ctx.path(rel)) for rel in stage.outputs},
    }
    mpath = _manifest_path(ctx, stage)
    mpath.parent.mkdir(parents=True, exist_ok=True)
    mpath.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# --- shared helpers -------------------------------------------------------


def _dtype(config: RunConfig):
    return np.float32 if config.dtype == "float32" else np.float64


def warmup_examples(config: RunConfig) -> list[sft.SftExample]:
    """Worked solutions for a fresh set of chains; a share of prompts carry a hint."""
    rng = np.random.default_rng([config.seed, 11])
    problems = synthenv.generate_corpus(
        config.warmup_n, _parse_lengths(config.warmup_lengths),
        seed=1000 + config.seed, modulus=config.modulus, id_prefix="warm",
    )
    out = []
    for p in problems:
        chain = synthenv.parse_question(p.question)
        target = tuple(vocab.encode(synthenv.worked_solution(chain)) + [vocab.EOS_ID])
        guided = rng.random() < config.warmup_guided_fraction
        hint = build_hint(p.reference_solution, config.hint) if guided else None
        prompt = build_prompt(p, "guided" if guided else "standard", hint)
        out.append(sft.SftExample(p.id, tuple(encode_prompt(prompt)), target, "reference_direct"))
    return out


def train_raw_policy(config: RunConfig) -> PolicyParams:
    params = init_params(config.arch, config.seed, dtype=_dtype(config))
    cfg = sft.SftConfig(config.warmup_epochs, config.warmup_lr, config.warmup_batch, weight_decay=0.0)
    params, _ = sft.train_sft(params, warmup_examples(config), cfg, seed=config.seed)
    params.version = 0
    return params


def corpora(config: RunConfig) -> tuple[list[Problem], list[Problem]]:
    if config.train_corpus:
        train = load_corpus(config.train_corpus)
    else:
        train = synthenv.generate_corpus(
            config.train_n, _parse_lengths(config.train_lengths),
            seed=2000 + config.seed, modulus=config.modulus,
        )
    if config.eval_corpus:
        held = load_corpus(config.eval_corpus)
    else:
        held = synthenv.generate_corpus(
            config.eval_n, _parse_lengths(config.eval_lengths),
            seed=3000 + config.seed, modulus=config.modulus, id_prefix="eval",
        )
    return train, held


def pass_rates(
    params: PolicyParams, problems: Sequence[Problem], n: int, config: RunConfig, salt: int = 77
) -> list[analytics.ProblemStats]:
    groups = sample_groups(
        ToyBackend(params, workers=config.workers), problems, "standard", n,
        config.decode, config.seed + salt,
    )
    return analytics.stats_from_groups(groups)


def mean_pass1(params: PolicyParams, problems: Sequence[Problem], config: RunConfig, n: int | None = None) -> float:
    stats = pass_rates(params, problems, n or config.eval_samples, config)
    return float(np.mean([s.c / s.n for s in stats])) if stats else float("nan")


def run_rl_from(
    init: PolicyParams, train: Sequence[Problem], held: Sequence[Problem], config: RunConfig
) -> dapo.RlRun:
    def hook(params, step):
        return {"pass@1": mean_pass1(params, held, config)}

    return dapo.run_rl(
        init, train, config.rl_config, config.rl_steps, config.seed, config.decode,
        eval_hook=hook, eval_every=config.eval_every, workers=config.workers,
    )


# --- stages ---------------------------------------------------------------

_DATA_KEYS = ("seed", "modulus", "train_corpus", "eval_corpus", "train_n", "train_lengths", "eval_n", "eval_lengths")
_WARM_KEYS = ("seed", "modulus", "window", "embed_dim", "hidden_dim", "dtype", "warmup_n", "warmup_lengths",
              "warmup_guided_fraction", "warmup_epochs", "warmup_lr", "warmup_batch",
              "hint_fraction", "hint_min_sentences")
_DECODE_KEYS = ("seed", "temperature", "top_p", "max_tokens")
_RL_KEYS = _DECODE_KEYS + ("rl_steps", "rl_lr", "rl_warmup", "rl_group_size", "rl_prompt_batch", "rl_minibatch",
                           "rl_updates", "rl_eps_low", "rl_eps_high", "rl_resample_budget",
                           "eval_samples", "eval_every")


def _stage_data(ctx: Context) -> None:
    train, held = corpora(ctx.config)
    write_corpus(ctx.path("data/train.jsonl"), train)
    write_corpus(ctx.path("data/eval.jsonl"), held)


def _stage_warmup(ctx: Context) -> None:
    save_params(ctx.path("checkpoints/raw.npz"), train_raw_policy(ctx.config))


def _load_train(ctx):
    return load_corpus(ctx.path("data/train.jsonl"))


def _stage_classify(ctx: Context) -> None:
    c = ctx.config
    raw = load_params(ctx.path("checkpoints/raw.npz"))
    groups = sample_groups(
        ToyBackend(raw, workers=c.workers), _load_train(ctx), "standard", c.classify_samples, c.decode, c.seed,
    )
    write_trajectories(ctx.path("samples/standard_classify.jsonl"), [t for g in groups for t in g.trajectories])
    labels = [
        analytics.classify_difficulty(s, c.hard_threshold, required_samples=c.classify_samples)
        for s in analytics.stats_from_groups(groups)
    ]
    write_jsonl(ctx.path("difficulty.jsonl"), [lab.to_dict() for lab in labels])


def load_labels(path) -> list[analytics.DifficultyLabel]:
    return [
        analytics.DifficultyLabel(d["problem_id"], d["label"], int(d["n"]), int(d["c"]), float(d["threshold"]))
        for d in read_jsonl(path)
    ]


def group_trajectories(trajs, size: int) -> list[TrajectoryGroup]:
    """Re-split a flat trajectory file (written group by group) into groups."""
    out: list[TrajectoryGroup] = []
    for i in range(0, len(trajs), size):
        chunk = trajs[i : i + size]
        out.append(TrajectoryGroup(chunk[0].problem_id, chunk))
    return out


def _hard_problems(ctx: Context) -> list[Problem]:
    hard = analytics.hard_ids(load_labels(ctx.path("difficulty.jsonl")))
    return [p for p in _load_train(ctx) if p.id in hard]


def _stage_explore(ctx: Context) -> None:
    c = ctx.config
    raw = load_params(ctx.path("checkpoints/raw.npz"))
    hard = _hard_problems(ctx)
    backend = ToyBackend(raw, workers=c.workers)
    std = sample_groups(backend, hard, "standard", c.explore_samples, c.decode, c.seed + 1)
    gui = sample_groups(backend, hard, "guided", c.explore_samples, c.decode, c.seed + 1, hint_spec=c.hint)
    write_trajectories(ctx.path("samples/standard_explore.jsonl"), [t for g in std for t in g.trajectories])
    write_trajectories(ctx.path("samples/guided_explore.jsonl"), [t for g in gui for t in g.trajectories])
    report = analytics.solve_set_overlap(analytics.stats_from_groups(std), analytics.stats_from_groups(gui))
    ctx.path("overlap.json").write_text(json.dumps(report.to_dict(), indent=1) + "\n", encoding="utf-8")


def _stage_sft(ctx: Context) -> None:
    c = ctx.config
    train = _load_train(ctx)
    labels = load_labels(ctx.path("difficulty.jsonl"))
    std16 = group_trajectories(load_trajectories(ctx.path("samples/standard_classify.jsonl")), c.classify_samples)
    std64 = group_trajectories(load_trajectories(ctx.path("samples/standard_explore.jsonl")), c.explore_samples)
    gui64 = group_trajectories(load_trajectories(ctx.path("samples/guided_explore.jsonl")), c.explore_samples)
    datasets = {
        "reft": sft.build_reft_dataset(train, std16 + std64, labels, c.sft_cap),
        "regft": sft.build_regft_dataset(train, std16 + std64, gui64, labels, c.sft_cap),
        "direct": sft.build_direct_reference_dataset(train, labels),
    }
    raw = load_params(ctx.path("checkpoints/raw.npz"))
    rows = []
    for name, ds in datasets.items():
        sft.write_sft_dataset(ctx.path(f"sft/{name}.jsonl"), ds)
        if ds:
            trained, losses = sft.train_sft(raw, ds, c.sft_config, seed=c.seed)
        else:
            log.warning("%s dataset is empty; keeping the raw policy", name)
            trained, losses = raw.snapshot(), []
        save_params(ctx.path(f"checkpoints/{name}.npz"), trained)
        rows.extend({"step": e, "split": "sft", "metric": f"{name}/loss", "value": v} for e, v in enumerate(losses))
    write_jsonl(ctx.path("sft/loss.jsonl"), rows)


def _stage_rl(ctx: Context) -> None:
    c = ctx.config
    train = _load_train(ctx)
    held = load_corpus(ctx.path("data/eval.jsonl"))
    rows = []
    for name in INITS:
        init = load_params(ctx.path(f"checkpoints/{name}.npz"))
        run = run_rl_from(init, train, held, c)
        dapo.write_step_reports(ctx.path(f"rl/{name}_steps.jsonl"), run.reports)
        save_params(ctx.path(f"checkpoints/{name}_rl.npz"), run.params)
        for r in run.reports:
            for key in ("mean_reward", "kept_groups", "clip_fraction"):
                rows.append({"step": r.step + 1, "split": "train", "metric": f"{name}/{key}", "value": getattr(r, key)})
        for e in run.evals:
            rows.append({"step": e["step"], "split": "eval", "metric": f"{name}/pass@1", "value": e["pass@1"]})
    write_jsonl(ctx.path("rl/metrics.jsonl"), rows)


def _stage_evaluate(ctx: Context) -> None:
    c = ctx.config
    held = load_corpus(ctx.path("data/eval.jsonl"))[: c.passk_problems]
    ks = _parse_ints(c.passk_ks)
    tables = {}
    if ks and held:
        for name in INITS:
            params = load_params(ctx.path(f"checkpoints/{name}_rl.npz"))
            stats = pass_rates(params, held, c.passk_samples, c, salt=99)
            tables[f"{name}+rl"] = analytics.pass_at_k_table(stats, ks)
    rows = list(read_jsonl(ctx.path("sft/loss.jsonl"))) + list(read_jsonl(ctx.path("rl/metrics.jsonl")))
    analytics.emit_metrics(ctx.out, rows, tables)


def stages() -> list[Stage]:
    ckpts = tuple(f"checkpoints/{n}.npz" for n in INITS)
    rl_ckpts = tuple(f"checkpoints/{n}_rl.npz" for n in INITS)
    samples = ("samples/standard_classify.jsonl", "samples/standard_explore.jsonl", "samples/guided_explore.jsonl")
    return [
        Stage("data", _DATA_KEYS, (), ("data/train.jsonl", "data/eval.jsonl"), _stage_data),
        Stage("warmup", _WARM_KEYS, (), ("checkpoints/raw.npz",), _stage_warmup),
        Stage("classify", _DECODE_KEYS + ("classify_samples", "hard_threshold"),
              ("data/train.jsonl", "checkpoints/raw.npz"),
              ("samples/standard_classify.jsonl", "difficulty.jsonl"), _stage_classify),
        Stage("explore", _DECODE_KEYS + ("explore_samples", "hint_fraction", "hint_min_sentences"),
              ("data/train.jsonl", "checkpoints/raw.npz", "difficulty.jsonl"),
              samples[1:] + ("overlap.json",), _stage_explore),
        Stage("sft", ("seed", "sft_cap", "sft_epochs", "sft_lr", "sft_batch", "sft_weight_decay",
                      "classify_samples", "explore_samples"),
              ("data/train.jsonl", "difficulty.jsonl", "checkpoints/raw.npz") + samples,
              ("sft/reft.jsonl", "sft/regft.jsonl", "sft/direct.jsonl", "sft/loss.jsonl") + ckpts[1:], _stage_sft),
        Stage("rl", _RL_KEYS, ("data/train.jsonl", "data/eval.jsonl") + ckpts,
              tuple(f"rl/{n}_steps.jsonl" for n in INITS) + ("rl/metrics.jsonl",) + rl_ckpts, _stage_rl),
        Stage("evaluate", _DECODE_KEYS + ("passk_problems", "passk_samples", "passk_ks"),
              ("data/eval.jsonl", "sft/loss.jsonl", "rl/metrics.jsonl") + rl_ckpts,
              ("metrics.csv", "passk.csv"), _stage_evaluate),
    ]


STAGE_NAMES = tuple(s.name for s in stages())


def run_pipeline(config: RunConfig, resume: bool = False, until: Optional[str] = None) -> Context:
    """Run the stages in order, optionally stopping after ``until``."""
    config.validate()
    if config.backend != "toy":
        raise ConfigError("backend: the full pipeline trains the toy policy and needs backend = toy")
    if until is not None and until not in STAGE_NAMES:
        raise ConfigError(f"until: unknown stage {until!r}")
    out = Path(config.out_dir or default_out_dir("pipeline"))
    for sub in ("data", "checkpoints", "samples", "sft", "rl", "manifests"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.dump(), encoding="utf-8")
    ctx = Context(config, out)
    for stage in stages():
        digest = _input_hash(ctx, stage)
        if resume and _is_complete(ctx, stage, digest):
            log.info("stage %s: up to date, skipped", stage.name)
            ctx.timings[stage.name] = 0.0
        else:
            _manifest_path(ctx, stage).unlink(missing_ok=True)
            t0 = time.perf_counter()
            try:
                stage.run(ctx)
            except Exception as exc:
                raise StageError(stage.name, exc) from exc
            ctx.timings[stage.name] = time.perf_counter() - t0
            _write_manifest(ctx, stage, digest)
            log.info("stage %s: done in %.1fs", stage.name, ctx.timings[stage.name])
        if stage.name == until:
            break
    return ctx
