"""Command-line entry point: run, sweep, summarize and oracle."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from flsim.controller import oracle_search
from flsim.errors import ConfigError, InfeasibleInstance, TrainingDivergence
from flsim.simulator import (
    Experiment,
    ExperimentConfig,
    RoundSnapshot,
    read_records_csv,
    run_and_write,
    summarize,
)
from flsim.trainer import evaluate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_INFEASIBLE = 4

log = logging.getLogger("flsim")


def _print_summary(name, summary):
    print(json.dumps({"name": name, **summary.to_dict()}, sort_keys=True))


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.records:
        cfg.output.records_csv = args.records
    _, summary = run_and_write(cfg)
    _print_summary(cfg.name, summary)
    return EXIT_OK


def cmd_sweep(args) -> int:
    paths = sorted(Path(args.configs).glob("*.yaml"))
    if not paths:
        raise ConfigError(f"no *.yaml configs in {args.configs}")
    configs = [ExperimentConfig.load(p) for p in paths]  # fail fast before running anything
    for path, cfg in zip(paths, configs):
        if args.out:
            out = Path(args.out)
            cfg.output.records_csv = str(out / f"{path.stem}.csv")
            cfg.output.summary_json = str(out / f"{path.stem}.json")
        _, summary = run_and_write(cfg)
        _print_summary(path.stem, summary)
    return EXIT_OK


def cmd_summarize(args) -> int:
    records = read_records_csv(args.records)
    baseline = read_records_csv(args.baseline) if args.baseline else None
    summary = summarize(records, args.target_accuracy, args.patience, baseline)
    _print_summary(Path(args.records).stem, summary)
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    exp = Experiment(cfg)
    model = exp.initial_model(0)
    snap = RoundSnapshot(exp, 0, args.round, model, exp.conditions(0, args.round),
                         evaluate(exp.nn.trainable, model, exp.test_set))
    result = oracle_search(snap, cfg.params.participants, args.budget)
    print(json.dumps({"reward": result.reward, "evaluations": result.evaluations,
                      "choices": {str(d): str(t) for d, t in sorted(result.choices.items())}},
                     sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flsim", description="Federated-learning participant "
                                "and execution-target selection simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("--config", required=True)
    run.add_argument("--records", help="override output.records_csv")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run every *.yaml in a directory")
    sweep.add_argument("--configs", required=True)
    sweep.add_argument("--out", help="directory for per-config CSV and JSON outputs")
    sweep.set_defaults(func=cmd_sweep)

    summ = sub.add_parser("summarize", help="convergence and PPW from a records CSV")
    summ.add_argument("--records", required=True)
    summ.add_argument("--baseline")
    summ.add_argument("--target-accuracy", type=float, default=90.0)
    summ.add_argument("--patience", type=int, default=5)
    summ.set_defaults(func=cmd_summarize)

    orc = sub.add_parser("oracle", help="exhaustive best choice for one frozen round")
    orc.add_argument("--config", required=True)
    orc.add_argument("--round", type=int, default=0)
    orc.add_argument("--budget", type=int, default=10 ** 6)
    orc.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except InfeasibleInstance as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
