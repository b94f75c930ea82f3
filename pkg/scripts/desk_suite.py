"""Run the desk-scale experiment suite and print a one-line summary per run.

    python scripts/desk_suite.py --output-dir runs            # full suite
    python scripts/desk_suite.py --output-dir runs --quick    # 2 seeds, 800 dialogues

Runs, in order: ACER summary space, ACER master space, GP-SARSA summary
space, the truncation-constant grid c in {1, 5, 10, 20}, and the
train-at-15%/test-at-0..50% error sweep.  Every run writes its own
directory with CSV tables and a manifest (see the harness module).
"""

import argparse

import numpy as np

from acer_lab.harness import ExperimentConfig, error_rate_sweep, run_protocol, sweep_hyper


def final_line(name, res):
    finals = [np.mean([r[2] for r in rows[-2:]]) for rows in res.per_seed.values()]
    print(f"{name:28s} final success {np.mean(finals):.3f} over {len(finals)} seeds -> {res.run_dir}", flush=True)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--output-dir", default="runs")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--quick", action="store_true")
    p.add_argument("--skip", default="", help="comma list of: acer,master,gp,c,error")
    args = p.parse_args()
    skip = set(filter(None, args.skip.split(",")))
    total, seeds = (800, 2) if args.quick else (4000, args.seeds)
    base = ExperimentConfig(total_dialogues=total, seeds=tuple(range(seeds)), output_dir=args.output_dir)
    if "acer" not in skip:
        final_line("acer summary", run_protocol(base))
    if "master" not in skip:
        final_line("acer master", run_protocol(ExperimentConfig(**{**base.to_dict(), "action_space": "master"})))
    if "gp" not in skip:
        gp = ExperimentConfig(**{**base.to_dict(), "algorithm": "gpsarsa", "total_dialogues": min(total, 1500), "milestone": 100})
        final_line("gpsarsa summary", run_protocol(gp))
    if "c" not in skip:
        out, runs = sweep_hyper(base, "c", [1, 5, 10, 20])
        for value, res in runs.items():
            final_line(f"acer summary c={value}", res)
    if "error" not in skip:
        res, table = error_rate_sweep(ExperimentConfig(**{**base.to_dict(), "train_error": 0.15}))
        for rate, _, succ, *_ in table:
            print(f"  eval error {rate:.2f}: success {succ[0]:.3f}", flush=True)


if __name__ == "__main__":
    main()
