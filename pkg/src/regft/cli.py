"""Command-line entry point: ``regft <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 invalid input or config, 3 runtime
or numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections import OrderedDict
from pathlib import Path

from . import analytics, dapo, pipeline, sft, synthenv
from .corpus import load_corpus, load_trajectories, write_corpus, write_jsonl, write_trajectories
from .pipeline import ConfigError, group_trajectories, load_labels
from .policy import DecodeConfig, load_params, save_params
from .remote import RemoteBackend, RemoteConfig
from .rollout import GuidedDiagnostics, HintSpec, ToyBackend, sample_groups

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("regft")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _root() -> Path:
    return Path(pipeline.default_out_dir("")).resolve()


def _out(path: str | None, default: str) -> Path:
    p = Path(path) if path else _root() / default
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _ks(text: str) -> list[int]:
    try:
        ks = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"--k expects comma-separated integers, got {text!r}") from exc
    if not ks:
        raise UsageError("--k is empty")
    return ks


def _decode(args) -> DecodeConfig:
    d = DecodeConfig(args.temperature, args.top_p, args.max_tokens)
    d.validate()
    return d


def _add_decode(p):
    p.add_argument("--temperature", type=float, default=0.7)
    p.add_argument("--top-p", type=float, default=0.9)
    p.add_argument("--max-tokens", type=int, default=100)


# --- subcommands ----------------------------------------------------------


def cmd_gen_data(args):
    try:
        lengths = pipeline._parse_lengths(args.lengths)
    except ValueError as exc:
        raise ConfigError(f"--lengths: {exc}") from exc
    problems = synthenv.generate_corpus(args.n, lengths, args.seed, args.modulus, args.id_prefix)
    out = _out(args.out, "corpus.jsonl")
    write_corpus(out, problems)
    print(f"wrote {len(problems)} problems to {out}")


def cmd_warmup(args):
    cfg = pipeline.make_config({"seed": args.seed, "modulus": args.modulus, "warmup_n": args.n})
    out = _out(args.out, "raw.npz")
    save_params(out, pipeline.train_raw_policy(cfg))
    print(f"wrote raw policy to {out}")


def cmd_sample(args):
    problems = load_corpus(args.corpus)
    if args.difficulty:
        hard = analytics.hard_ids(load_labels(args.difficulty))
        problems = [p for p in problems if p.id in hard]
    if args.endpoint:
        backend = RemoteBackend(RemoteConfig(args.endpoint))
    elif args.checkpoint:
        backend = ToyBackend(load_params(args.checkpoint), workers=args.workers)
    else:
        raise UsageError("sample needs --checkpoint or --endpoint")
    diag = GuidedDiagnostics()
    groups = sample_groups(
        backend, problems, args.mode, args.G, _decode(args), args.seed,
        hint_spec=HintSpec(args.hint_fraction), diagnostics=diag,
    )
    out = _out(args.out, f"samples_{args.mode}.jsonl")
    write_trajectories(out, [t for g in groups for t in g.trajectories])
    print(f"wrote {len(groups)} groups of {args.G} to {out}")
    if diag.answer_in_hint:
        print(f"note: {diag.answer_in_hint} of {diag.prompts} hints contain the boxed answer")


def _stats(path):
    return analytics.stats_from_groups(group_trajectories(load_trajectories(path), 1))


def cmd_classify(args):
    stats = _stats(args.trajectories)
    labels = [analytics.classify_difficulty(s, args.threshold, args.samples) for s in stats]
    out = _out(args.out, "difficulty.jsonl")
    write_jsonl(out, [lab.to_dict() for lab in labels])
    print(f"{sum(lab.is_hard for lab in labels)} of {len(labels)} problems are hard; wrote {out}")


def _groups(paths):
    out = []
    for path in paths or []:
        out.extend(group_trajectories(load_trajectories(path), 1))
    return out


def cmd_build_sft(args):
    problems = load_corpus(args.corpus)
    labels = load_labels(args.difficulty)
    if args.kind == "reft":
        ds = sft.build_reft_dataset(problems, _groups(args.standard), labels, args.cap)
    elif args.kind == "regft":
        ds = sft.build_regft_dataset(problems, _groups(args.standard), _groups(args.guided), labels, args.cap)
    else:
        skipped = sft.SkipCounter()
        ds = sft.build_direct_reference_dataset(problems, labels, skipped)
        if skipped.untokenizable:
            print(f"skipped {skipped.untokenizable} untokenizable references")
    out = _out(args.out, f"sft_{args.kind}.jsonl")
    sft.write_sft_dataset(out, ds)
    print(f"wrote {len(ds)} examples to {out}")


def cmd_train_sft(args):
    params = load_params(args.checkpoint)
    config = sft.SftConfig(args.epochs, args.lr, args.batch_size, weight_decay=args.weight_decay)
    trained, losses = sft.train_sft(params, sft.load_sft_dataset(args.dataset), config, args.seed)
    out = _out(args.out, "sft.npz")
    save_params(out, trained)
    print("epoch losses: " + ", ".join(f"{x:.4f}" for x in losses))


def cmd_train_rl(args):
    params = load_params(args.checkpoint)
    problems = load_corpus(args.corpus)
    config = dapo.RlConfig(
        learning_rate=args.lr, warmup_rollout_steps=args.warmup, group_size=args.G,
        prompt_batch=args.prompt_batch, minibatch_trajectories=args.minibatch,
        updates_per_rollout=args.updates,
    )
    held = load_corpus(args.eval_corpus) if args.eval_corpus else []
    run_cfg = pipeline.make_config({
        "seed": args.seed, "temperature": args.temperature, "top_p": args.top_p,
        "max_tokens": args.max_tokens, "eval_samples": args.eval_samples, "workers": args.workers,
    })
    hook = (lambda p, step: {"pass@1": pipeline.mean_pass1(p, held, run_cfg)}) if held else None
    run = dapo.run_rl(params, problems, config, args.steps, args.seed, _decode(args),
                      eval_hook=hook, eval_every=args.eval_every, workers=args.workers)
    out_dir = Path(args.out_dir) if args.out_dir else _root() / "rl"
    out_dir.mkdir(parents=True, exist_ok=True)
    dapo.write_step_reports(out_dir / "steps.jsonl", run.reports)
    save_params(out_dir / "final.npz", run.params)
    rows = [{"step": e["step"], "split": "eval", "metric": "pass@1", "value": e["pass@1"]} for e in run.evals]
    rows += [{"step": r.step + 1, "split": "train", "metric": "mean_reward", "value": r.mean_reward}
             for r in run.reports]
    analytics.emit_metrics(out_dir, rows)
    print(f"wrote {len(run.reports)} step reports to {out_dir}")


def cmd_eval_passk(args):
    ks = _ks(args.k)
    stats = _stats(args.trajectories)
    for s in stats:
        if s.n != args.N:
            raise ValueError(f"{s.problem_id}: expected {args.N} samples, found {s.n}")
    if any(k > args.N for k in ks):
        raise ValueError(f"k must not exceed N={args.N}")
    table = analytics.pass_at_k_table(stats, ks)
    out = _out(args.out, "passk.csv")
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(analytics.PASSK_HEADER)
        for r in table:
            w.writerow([args.checkpoint, r["k"], repr(r["estimate"]), r["N"], r["c_total"]])
    for r in table:
        print(f"pass@{r['k']} = {r['estimate']:.4f}")


def cmd_report(args):
    """Join metrics.csv files from several runs into one table keyed by step."""
    columns: "OrderedDict[str, dict[int, float]]" = OrderedDict()
    for run in args.runs:
        path = Path(run)
        if path.is_dir():
            path = path / "metrics.csv"
        name = path.parent.name
        for r in analytics.read_metrics(path):
            columns.setdefault(f"{name}:{r['split']}:{r['metric']}", {})[r["step"]] = r["value"]
    steps = sorted({s for col in columns.values() for s in col})
    out = _out(args.out, "report.csv")
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", *columns])
        for s in steps:
            w.writerow([s, *(repr(col[s]) if s in col else "" for col in columns.values())])
    print(f"wrote {len(steps)} rows x {len(columns)} series to {out}")


def cmd_pipeline(args):
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    for key in ("seed", "workers", "profile"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    if args.out:
        overrides["out_dir"] = args.out
    if args.config:
        cfg = pipeline.load_config(args.config, overrides)
    else:
        cfg = pipeline.make_config(overrides)
    if args.dump_config:
        sys.stdout.write(cfg.dump())
        return
    ctx = pipeline.run_pipeline(cfg, resume=args.resume, until=args.until)
    for name, secs in ctx.timings.items():
        print(f"{name:9s} {secs:7.1f}s")
    print(f"outputs in {ctx.out}")


# --- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="regft", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic chain corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--lengths", default="2:0.5,8:0.5", help="length:weight pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--modulus", type=int, default=7)
    p.add_argument("--id-prefix", default="syn")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("warmup", help="train the raw toy policy on worked solutions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--modulus", type=int, default=7)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_warmup)

    p = sub.add_parser("sample", help="sample G trajectories per problem")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--endpoint", help="remote completion server URL")
    p.add_argument("--difficulty", help="only sample problems labelled hard here")
    p.add_argument("--mode", choices=["standard", "guided"], default="standard")
    p.add_argument("--G", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hint-fraction", type=float, default=0.8)
    p.add_argument("--workers", type=int, default=1)
    _add_decode(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("classify", help="label problems hard / not_hard")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--threshold", type=float, default=0.25)
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("build-sft", help="build a ReFT, ReGFT or direct-reference dataset")
    p.add_argument("--kind", choices=["reft", "regft", "direct"], required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--difficulty", required=True)
    p.add_argument("--standard", action="append", help="standard-mode trajectory file (repeatable)")
    p.add_argument("--guided", action="append", help="guided-mode trajectory file (repeatable)")
    p.add_argument("--cap", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_sft)

    p = sub.add_parser("train-sft", help="fine-tune a checkpoint on an SFT dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_sft)

    p = sub.add_parser("train-rl", help="run DAPO from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--eval-corpus")
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--G", type=int, default=16)
    p.add_argument("--prompt-batch", type=int, default=64)
    p.add_argument("--minibatch", type=int, default=2048)
    p.add_argument("--updates", type=int, default=4)
    p.add_argument("--eval-samples", type=int, default=16)
    p.add_argument("--eval-every", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    _add_decode(p)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_train_rl)

    p = sub.add_parser("eval-passk", help="pass@k table from a trajectory file")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--k", default="1,4,16,64")
    p.add_argument("--checkpoint", default="checkpoint", help="label for the checkpoint column")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_passk)

    p = sub.add_parser("report", help="join metrics.csv files into one table keyed by step")
    p.add_argument("runs", nargs="+", help="run directories or metrics.csv files")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="run the full experiment")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--profile", choices=sorted(pipeline.PROFILES))
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--until", choices=pipeline.STAGE_NAMES)
    p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("missing subcommand (see --help)")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
