"""Alignment ablation (alpha = 1 vs 0) and DCSA cell variants on shared transformers.

    python scripts/run_ablation.py --grammars tomita3 d2 --train-epochs 100 --distill-epochs 60

The alpha = 0 and GRU/LSTM runs reuse the dataset and transformer of the
alpha = 1 RNN run, so the comparison isolates the distillation stage.
"""

import argparse
import logging

from enc2dfa.experiments import Budget, experiment_config, run_cached


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grammars", nargs="+", default=["tomita3", "d2"])
    ap.add_argument("--train-epochs", type=int, default=200)
    ap.add_argument("--distill-epochs", type=int, default=200)
    ap.add_argument("--stop-loss", type=float)
    ap.add_argument("--kinds", nargs="+", default=["rnn", "gru", "lstm"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    budget = Budget(args.train_epochs, args.distill_epochs, args.stop_loss)

    print(f"{'grammar':10s} {'cell':5s} {'alpha':>5s} {'C(T,D)':>7s} {'C(T,A)':>7s} {'Diff1':>8s} {'Diff2':>8s}")
    for g in args.grammars:
        base = experiment_config(g, budget, seed=args.seed)
        variants = [("rnn", 1.0), ("rnn", 0.0)] + [(k, 1.0) for k in args.kinds if k != "rnn"]
        for kind, alpha in variants:
            cfg = experiment_config(g, budget, kind=kind, alpha=alpha, seed=args.seed)
            report, _ = run_cached(cfg, args.out, reuse_from=None if cfg == base else base)
            t = report.splits["test"]
            print(f"{g:10s} {kind:5s} {alpha:5.1f} {t['C_TD']:7.4f} {t['C_TA']:7.4f} "
                  f"{report.diff1:8.3f} {report.diff2:8.3f}", flush=True)


if __name__ == "__main__":
    main()
