"""Monte-Carlo success of the scripted and random-valid policies across error rates.

    python scripts/baselines.py --dialogues 1000 --out baselines.csv

These numbers are the floor and ceiling that learned policies are compared
against (the random floor for the summary-space learning target, the
scripted trend for the robustness sweep).
"""

import argparse
import csv
import sys

from acer_lab.harness import DEFAULT_ERROR_GRID, evaluate_greedy, random_policy, scripted_policy
from acer_lab.dialenv import EnvConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dialogues", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ontology", default="toy")
    p.add_argument("--no-mask", action="store_true")
    p.add_argument("--out", default="-")
    args = p.parse_args()
    out = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("policy", "error_rate", "success", "reward", "turns"))
    for rate in DEFAULT_ERROR_GRID:
        env_config = EnvConfig(error_rate=rate, mask=not args.no_mask, ontology=args.ontology, seed=args.seed)
        for name, policy in (("scripted", scripted_policy), ("random", random_policy(args.seed))):
            res = evaluate_greedy(policy, env_config, args.dialogues, args.seed)
            w.writerow((name, f"{rate:.2f}", f"{res.success:.4f}", f"{res.reward:.4f}", f"{res.turns:.4f}"))
            out.flush()


if __name__ == "__main__":
    main()
