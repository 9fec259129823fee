"""Command-line driver: ``stagepoly {train,predict,bench,regret,parallel}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure,
4 failed bound check (``regret``).  The resolved configuration of every
run is printed to stderr as one JSON line.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .errors import (
    EmptyData,
    InvalidParam,
    ManifestError,
    ModelFormatError,
    NumericOverflow,
    ParseError,
    SolverFailure,
    UndefinedAUC,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_ASSERT = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _learner_flags(p):
    g = p.add_argument_group("learner")
    g.add_argument("--task", choices=("binary", "regression"), default=None)
    g.add_argument("--stage-poly", action="store_true", help="enable staged polynomial expansion")
    g.add_argument("--sched-exponent", type=float, default=1.0, metavar="ALPHA",
                   help="budget exponent: s_k = avg_nnz ** ALPHA")
    g.add_argument("--epochs", type=int, default=6)
    g.add_argument("--bits", type=int, default=None, help="hash bits (default 18; 24 for cubic)")
    g.add_argument("--heuristic", choices=("weight", "ssm"), default="weight")
    g.add_argument("--fallback", action="store_true")
    g.add_argument("--expand", choices=("quad", "cubic", "bigram"), default=None)
    g.add_argument("--lambda", dest="l2", type=float, default=0.0)
    g.add_argument("--step-mode", choices=("theorem", "fixed", "adaptive"), default="adaptive")
    g.add_argument("--learning-rate", type=float, default=0.5)
    g.add_argument("--passes", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--max-degree", type=int, default=8)


def learner_config(args, task: str = "binary"):
    from .learner import LearnerConfig

    bits = args.bits if args.bits is not None else (24 if args.expand == "cubic" else 18)
    return LearnerConfig(
        task=args.task or task, stage_poly=args.stage_poly, alpha=args.sched_exponent,
        epochs=args.epochs, bits=bits, heuristic=args.heuristic, fallback=args.fallback,
        expand=args.expand, l2=args.l2, step_mode=args.step_mode,
        learning_rate=args.learning_rate, passes=args.passes, seed=args.seed,
        max_degree=args.max_degree)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stagepoly", description="Online learning with staged polynomial expansion.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model on an example file")
    t.add_argument("data")
    t.add_argument("--model", required=True, help="output model file")
    t.add_argument("--tune", action="store_true", help="pick the learning rate from the grid first")
    _learner_flags(t)

    pr = sub.add_parser("predict", help="write one prediction per input line")
    pr.add_argument("data")
    pr.add_argument("--model", required=True)
    pr.add_argument("--out", default="-")

    b = sub.add_parser("bench", help="run baselines and staged expansion over datasets")
    b.add_argument("manifests", nargs="+", help="manifest files or names of bundled datasets")
    b.add_argument("--methods", default="lin,quad,cubic,apple-best")
    b.add_argument("--records", default="records.csv")
    b.add_argument("--cdf", default="cdf.csv")
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--split-seed", type=int, default=0)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("regret", help="check the last-iterate bound on synthetic problems")
    r.add_argument("--config", default=None, help="JSON-lines experiment definitions")
    r.add_argument("--T", type=int, nargs="+", default=[100, 1000])
    r.add_argument("--seeds", type=int, default=20)
    r.add_argument("--delta", type=float, default=0.05)
    r.add_argument("--out", default=None, help="JSON-lines trace output")

    pa = sub.add_parser("parallel", help="simulated sharded training with averaging")
    pa.add_argument("data")
    pa.add_argument("--test", default=None, help="held-out file (default: 80/20 split)")
    pa.add_argument("--shards", type=int, default=4)
    pa.add_argument("--base", choices=("linear", "bigram"), default="linear")
    pa.add_argument("--weighting", choices=("uniform", "examples"), default="uniform")
    pa.add_argument("--model", default=None)
    _learner_flags(pa)
    pa.set_defaults(passes=5)
    return p


def _emit_config(d: dict):
    print(json.dumps({"config": d}, sort_keys=True), file=sys.stderr)


def cmd_train(args):
    from .io import ExampleStream
    from .learner import train, tune_learning_rate
    from .serialize import save_model

    cfg = learner_config(args)
    stream = ExampleStream(args.data, cfg.task, cfg.seed)
    if args.tune:
        lr, _ = tune_learning_rate(stream, cfg)
        cfg = replace(cfg, learning_rate=lr)
    _emit_config(cfg.to_dict())
    rep = train(stream, cfg)
    save_model(rep.model, args.model)
    print(json.dumps({
        "progressive_error": rep.progressive_error,
        "epoch_errors": rep.epoch_errors,
        "examples_seen": rep.examples_seen,
        "features_per_example": rep.features_per_example,
        "wall_time": rep.wall_time,
        "parents": [str(m) for m in rep.model.state.snapshot_parents()],
    }))
    return EXIT_OK


def cmd_predict(args):
    from .io import ExampleStream
    from .serialize import load_model

    model = load_model(args.model)
    _emit_config(dict(model.cfg.to_dict(), model=args.model, data=args.data))
    stream = ExampleStream(args.data, model.cfg.task, model.cfg.seed)
    out = sys.stdout if args.out == "-" else open(args.out, "w", encoding="utf-8")
    try:
        for ex in stream:
            out.write(f"{model.predict_one(ex)!r}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _manifest(ref):
    from .io import bundled_manifest, bundled_names, load_manifest

    if Path(ref).exists():
        return load_manifest(ref)
    if ref in bundled_names():
        return bundled_manifest(ref)
    raise ManifestError(f"no manifest file or bundled dataset named {ref!r}")


def cmd_bench(args):
    from .bench import BenchConfig, expand_methods, run_suite, write_csvs

    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    config = BenchConfig(repeats=args.repeats, split_seed=args.split_seed,
                         workers=args.workers, seed=args.seed)
    expand_methods(methods, config.alphas)
    _emit_config(dict(vars(config), methods=methods))
    records = run_suite([_manifest(m) for m in args.manifests], methods, config)
    write_csvs(records, args.records, args.cdf)
    failed = [r for r in records if r.status != "ok"]
    for r in failed:
        print(f"{r.dataset}: {r.message}", file=sys.stderr)
    return EXIT_DATA if failed else EXIT_OK


def cmd_regret(args):
    from .regret import STANDARD_INSTANCES, problem_from_dict, run_regret_experiment

    if args.config:
        specs = [json.loads(line) for line in Path(args.config).read_text().splitlines()
                 if line.strip()]
    else:
        specs = [dict(s) for s in STANDARD_INSTANCES]
    problems = [(s, problem_from_dict(s)) for s in specs]
    _emit_config({"T": args.T, "seeds": args.seeds, "delta": args.delta, "experiments": specs})
    out = open(args.out, "w", encoding="utf-8") if args.out else None
    ok = True
    try:
        for spec, problem in problems:
            horizons = spec.get("T", args.T)
            for T in horizons if isinstance(horizons, list) else [horizons]:
                trace = run_regret_experiment(problem, int(T), spec.get("seeds", args.seeds),
                                              spec.get("base_seed", 0), spec.get("delta", args.delta))
                print(json.dumps(trace.summary()))
                if out:
                    trace.write(out)
                ok &= trace.passed
    finally:
        if out:
            out.close()
    return EXIT_OK if ok else EXIT_ASSERT


def cmd_parallel(args):
    from .io import ExampleStream, split_mask
    from .parallel import ShardPlan, auc, train_parallel
    from .serialize import save_model

    cfg = learner_config(args)
    if args.base == "bigram" and cfg.expand not in (None, "bigram"):
        raise InvalidParam("--base bigram conflicts with --expand")
    plan_kw = dict(passes=args.passes, base=args.base, weighting=args.weighting)
    _emit_config(dict(cfg.to_dict(), shards=args.shards, **plan_kw))
    if args.test:
        examples = list(ExampleStream(args.data, cfg.task, cfg.seed))
        test = list(ExampleStream(args.test, cfg.task, cfg.seed))
    else:
        full = list(ExampleStream(args.data, cfg.task, cfg.seed))
        if not full:
            raise EmptyData(f"{args.data}: no examples")
        mask = split_mask(len(full), 0.8, cfg.seed)
        examples = [e for e, m in zip(full, mask) if m]
        test = [e for e, m in zip(full, mask) if not m]
    plan = ShardPlan.from_examples(examples, args.shards, **plan_kw)
    model = train_parallel(plan, cfg)
    if args.model:
        save_model(model, args.model)
    scores = model.predict(test)
    print(json.dumps({"auc": auc(scores, [e.label for e in test]),
                      "parents": len(model.state.parents)}))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "bench": cmd_bench,
            "regret": cmd_regret, "parallel": cmd_parallel}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidParam as exc:
        print(f"invalid parameter: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericOverflow, SolverFailure) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, ManifestError, EmptyData, ModelFormatError, UndefinedAUC,
            OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
