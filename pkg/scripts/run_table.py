"""Run the full pipeline over a set of grammars and print a consistency table.

    python scripts/run_table.py --grammars tomita3 d2 --train-epochs 60 --distill-epochs 60

Each run lands in <out>/<grammar>-<kind>-<config digest>/ and is skipped if
its report already exists, so an interrupted sweep can be resumed.
"""

import argparse
import logging

from enc2dfa.experiments import Budget, experiment_config, run_cached
from enc2dfa.grammars import BUILTIN_NAMES


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grammars", nargs="+", default=list(BUILTIN_NAMES))
    ap.add_argument("--train-epochs", type=int, default=200)
    ap.add_argument("--distill-epochs", type=int, default=200)
    ap.add_argument("--stop-loss", type=float, help="early stop for both training stages")
    ap.add_argument("--kind", default="rnn")
    ap.add_argument("--alpha", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/table")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    budget = Budget(args.train_epochs, args.distill_epochs, args.stop_loss)

    print(f"{'grammar':10s} {'C(L,T)':>7s} {'C(T,D)':>7s} {'C(T,A)':>7s} {'C(L,A)':>7s} {'|A|':>4s} "
          f"{'min':>4s} {'Diff1':>8s} {'Diff2':>8s}  verdict")
    for g in args.grammars:
        cfg = experiment_config(g, budget, args.kind, args.alpha, args.seed)
        report, _ = run_cached(cfg, args.out)
        t = report.splits["test"]
        secs = sum(report.timings.values())
        print(f"{g:10s} {t['C_LT']:7.4f} {t['C_TD']:7.4f} {t['C_TA']:7.4f} {t['C_LA']:7.4f} "
              f"{report.dfa_states:4d} {report.minimal_dfa_states:4d} {report.diff1:8.3f} {report.diff2:8.3f}  "
              f"{report.verdict} ({secs:.0f}s)", flush=True)


if __name__ == "__main__":
    main()
