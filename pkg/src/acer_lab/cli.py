"""Command-line driver: ``acer-lab {train,eval,sweep-hyper,sweep-error,inspect-snapshot}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from acer_lab.acer import AcerAgent, Hyperparameters
from acer_lab.errors import AcerLabError
from acer_lab.gpsarsa import GPModel
from acer_lab.harness import (
    DEFAULT_ERROR_GRID,
    ExperimentConfig,
    error_rate_sweep,
    evaluate_snapshot,
    load_snapshot,
    run_protocol,
    sweep_hyper,
)


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _add_experiment_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON file with ExperimentConfig fields; flags override it")
    p.add_argument("--algorithm", choices=["acer", "gpsarsa"])
    p.add_argument("--action-space", choices=["summary", "master"])
    p.add_argument("--mask", dest="mask", action="store_true", default=None)
    p.add_argument("--no-mask", dest="mask", action="store_false")
    p.add_argument("--train-error", type=float)
    p.add_argument("--eval-errors", type=_floats)
    p.add_argument("--total", dest="total_dialogues", type=int)
    p.add_argument("--milestone", type=int)
    p.add_argument("--eval-dialogues", type=int)
    p.add_argument("--seeds", type=_ints)
    p.add_argument("--ontology")
    p.add_argument("--output-dir")
    p.add_argument("--gp-nu", type=float)
    p.add_argument("--gp-noise", type=float)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="NAME=VALUE",
                   help="hyperparameter override, e.g. --set c=10 (repeatable)")


def _parse_value(field: dataclasses.Field, text: str):
    kind = field.type if isinstance(field.type, type) else {"float": float, "int": int, "str": str, "bool": bool}[field.type]
    if kind is bool:
        if text.lower() not in ("true", "false", "1", "0"):
            raise AcerLabError(f"expected a boolean for {field.name}, got {text!r}")
        return text.lower() in ("true", "1")
    return kind(text)


def build_config(args, **defaults) -> ExperimentConfig:
    data = dict(defaults)
    if args.config is not None:
        try:
            data.update(json.loads(args.config.read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise AcerLabError(f"cannot read config file {args.config}: {exc}") from None
    for name in ExperimentConfig.__dataclass_fields__:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    hyper = dict(data.get("hyper", {}))
    fields = {f.name: f for f in dataclasses.fields(Hyperparameters)}
    for item in args.overrides:
        name, _, text = item.partition("=")
        if name not in fields or not text:
            raise AcerLabError(f"bad hyperparameter override {item!r}")
        hyper[name] = _parse_value(fields[name], text)
    data["hyper"] = hyper
    return ExperimentConfig.from_dict(data).validate()


def _print_rows(rows, out):
    for k, d, succ, rew, turns in rows:
        ci = "" if succ[1] is None else f" +/- {succ[1]:.3f}"
        print(f"milestone {k:3d}  dialogues {d:6d}  success {succ[0]:.3f}{ci}  reward {rew[0]:7.2f}  turns {turns[0]:5.2f}", file=out)


def cmd_train(args) -> int:
    config = build_config(args)
    result = run_protocol(config)
    _print_rows(result.rows, sys.stdout)
    print(f"results in {result.run_dir}")
    for seed, msg in result.failures.items():
        print(f"seed {seed} failed: {msg}", file=sys.stderr)
    return 0 if result.ok else 3


def cmd_eval(args) -> int:
    config = build_config(args)
    if not args.snapshot.is_file():
        raise AcerLabError(f"snapshot not found: {args.snapshot}")
    rates = config.eval_errors or (config.train_error,)
    seed = config.seeds[0]
    for rate in rates:
        res = evaluate_snapshot(args.snapshot, config.env_config(seed, rate), config.eval_dialogues, seed)
        print(json.dumps({"error_rate": rate, **dataclasses.asdict(res)}, sort_keys=True))
    return 0


def cmd_sweep_hyper(args) -> int:
    config = build_config(args)
    out, runs = sweep_hyper(config, args.param, args.values.split(","))
    for value, res in runs.items():
        final = res.rows[-1] if res.rows else None
        if final is not None:
            print(f"{args.param}={value}: final success {final[2][0]:.3f}")
    print(f"results in {out}")
    return 0 if all(r.ok for r in runs.values()) else 3


def cmd_sweep_error(args) -> int:
    config = build_config(args, train_error=0.15)
    rates = args.rates if args.rates is not None else DEFAULT_ERROR_GRID
    result, table = error_rate_sweep(config, rates)
    for rate, _, succ, *_ in table:
        ci = "" if succ[1] is None else f" +/- {succ[1]:.3f}"
        print(f"error {rate:.2f}: success {succ[0]:.3f}{ci}")
    print(f"results in {result.run_dir / 'error_sweep.csv'}")
    return 0 if result.ok else 3


def cmd_inspect(args) -> int:
    if not args.snapshot.is_file():
        raise AcerLabError(f"snapshot not found: {args.snapshot}")
    learner = load_snapshot(args.snapshot.read_bytes())
    if isinstance(learner, AcerAgent):
        info = {
            "kind": "acer",
            "dialogues": learner.dialogues,
            "architecture": dataclasses.asdict(learner.params.arch),
            "n_actions": learner.params.arch.n_actions,
            "n_parameters": int(learner.params.flat().size),
            "replay_episodes": len(learner.memory),
            "replay_transitions": learner.memory.n_transitions,
            "hyper": dataclasses.asdict(learner.hyper),
        }
    else:
        assert isinstance(learner, GPModel)
        info = {
            "kind": "gpsarsa",
            "dialogues": learner.dialogues,
            "mode": learner.config.mode,
            "belief_dim": learner.belief_dim,
            "dictionary_size": learner.dictionary_size,
            "config": dataclasses.asdict(learner.config),
        }
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acer-lab", description="Dialogue policy learning experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", help="train all seeds and evaluate every milestone")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("eval", help="greedy evaluation of one snapshot")
    _add_experiment_flags(p)
    p.add_argument("--snapshot", type=Path, required=True)
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("sweep-hyper", help="one protocol run per hyperparameter value")
    _add_experiment_flags(p)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True)
    p.set_defaults(func=cmd_sweep_hyper)
    p = sub.add_parser("sweep-error", help="train at one error rate, evaluate across a grid")
    _add_experiment_flags(p)
    p.add_argument("--rates", type=_floats)
    p.set_defaults(func=cmd_sweep_error)
    p = sub.add_parser("inspect-snapshot", help="print a snapshot summary as JSON")
    p.add_argument("snapshot", type=Path)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AcerLabError, ValueError, TypeError) as exc:
        print(f"acer-lab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
