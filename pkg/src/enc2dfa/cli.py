"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .automata import Alphabet, Dfa, minimize, parse_regex, regex_to_dfa, to_dot
from .dataset import DatasetConfig, generate_dataset, load_dataset, save_dataset
from .dcsa import DcsaKind, DcsaModel, DistillConfig, build_dcsa, distill
from .extraction import ExtractionBudget, extract_dfa_from_dcsa
from .grammars import BUILTIN_NAMES, builtin_language
from .metrics import agreement, labels
from .pipeline import PipelineConfig, run_pipeline
from .transformer import TrainConfig, TransformerConfig, TransformerModel, build_transformer, train_transformer


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def load_model(path):
    """A DFA, transformer or DCSA, recognised from the file's contents."""
    with open(path, encoding="utf-8") as f:
        obj = json.load(f)
    kind = obj.get("header", {}).get("model_kind") if isinstance(obj, dict) else None
    if kind == "transformer":
        return TransformerModel.load(path)
    if kind == "dcsa":
        return DcsaModel.load(path)
    if isinstance(obj, dict) and "delta" in obj:
        return Dfa.from_json(obj)
    raise ValueError(f"{path}: not a DFA, transformer or DCSA file")


def _language(args) -> Dfa:
    if bool(args.grammar) == bool(args.regex):
        raise UsageError("give exactly one of --grammar or --regex")
    if args.grammar:
        if args.grammar not in BUILTIN_NAMES:
            raise UsageError(f"unknown grammar {args.grammar!r}; see list-grammars")
        return builtin_language(args.grammar)
    if not args.alphabet:
        raise UsageError("--regex needs --alphabet")
    alphabet = Alphabet(args.alphabet)
    return minimize(regex_to_dfa(parse_regex(args.regex, alphabet), alphabet))


def cmd_list_grammars(args):
    for name in BUILTIN_NAMES:
        dfa = builtin_language(name)
        print(f"{name:10s} alphabet={''.join(dfa.alphabet.symbols)} states={dfa.n_states}")


def cmd_gen_data(args):
    cfg = DatasetConfig(size=args.size, min_len=args.min_len, max_len=args.max_len,
                        test_fraction=args.test_fraction, seed=args.seed, sparse_policy=args.sparse_policy)
    ds = generate_dataset(_language(args), cfg)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds.items)} items ({len(ds.train)} train / {len(ds.test)} test) to {args.out}")


def cmd_train_transformer(args):
    ds = load_dataset(args.data)
    cfg = TransformerConfig.for_alphabet(ds.alphabet, d_model=args.d_model, n_layers=args.n_layers,
                                         n_heads=args.n_heads, d_ff=args.d_ff, max_len=args.max_len)
    model = build_transformer(cfg, ds.alphabet, args.seed)
    model, history = train_transformer(model, ds, TrainConfig(epochs=args.epochs, learning_rate=args.lr,
                                                              seed=args.seed))
    model.save(args.out)
    print(f"final loss {history[-1]:.5f}; wrote {args.out}")


def cmd_distill(args):
    ds = load_dataset(args.data)
    transformer = TransformerModel.load(args.transformer)
    dcsa = build_dcsa(args.kind, transformer, args.seed)
    dc = DistillConfig(epochs=args.epochs, learning_rate=args.lr, alpha=args.alpha, seed=args.seed,
                       alternation=args.alternation)
    dcsa, history = distill(dcsa, transformer, ds, dc)
    dcsa.save(args.out)
    print(f"final L_D {history['loss_d'][-1]:.5f}; wrote {args.out}")


def cmd_extract(args):
    dcsa = DcsaModel.load(args.dcsa)
    budget = ExtractionBudget(max_abstract_states=args.max_abstract_states, max_refinements=args.max_refinements,
                              random_probe_count=args.probes, max_hypothesis_states=args.max_states,
                              wall_clock_seconds=args.seconds, probe_max_len=args.probe_max_len)
    dfa, xlog = extract_dfa_from_dcsa(dcsa, budget, args.seed)
    dfa.save(args.out)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as f:
            json.dump(xlog.to_json(), f, indent=2)
    if args.dot:
        Path(args.dot).write_text(to_dot(dfa, name="extracted"), encoding="utf-8")
    flag = " (incomplete: " + xlog.reason + ")" if xlog.incomplete else ""
    print(f"extracted {dfa.n_states}-state DFA{flag}; wrote {args.out}")


def cmd_evaluate(args):
    ds = load_dataset(args.against)
    items = ds.select(args.split)
    model = load_model(args.model)
    if args.reference:
        ref = labels(load_model(args.reference), items)
        ref_name = args.reference
    else:
        ref = [it.label for it in items]
        ref_name = "dataset labels"
    rate = agreement(labels(model, items), ref)
    print(f"consistency {rate:.4f} on {len(items)} {args.split} items ({args.model} vs {ref_name})")


def cmd_pipeline(args):
    cfg = PipelineConfig.load(args.config)
    report = run_pipeline(cfg, out_dir=args.out, reuse_dir=args.reuse)
    print(report.summary())


def cmd_export_dot(args):
    dot = to_dot(Dfa.load(args.dfa), name=args.name)
    if args.out:
        Path(args.out).write_text(dot, encoding="utf-8")
    else:
        sys.stdout.write(dot)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="enc2dfa", description="Extract DFAs from encoder-only transformers via a DCSA.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("list-grammars", help="show builtin languages")
    s.set_defaults(fn=cmd_list_grammars)

    s = sub.add_parser("gen-data", help="sample a balanced labelled dataset")
    s.add_argument("--grammar")
    s.add_argument("--regex")
    s.add_argument("--alphabet")
    s.add_argument("--size", type=int, default=2000)
    s.add_argument("--min-len", type=int, default=1)
    s.add_argument("--max-len", type=int, default=24)
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.add_argument("--sparse-policy", choices=("error", "repeat"), default="error")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("train-transformer", help="train the encoder acceptor")
    s.add_argument("--data", required=True)
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--lr", type=float, default=5e-4)
    s.add_argument("--d-model", type=int, default=32)
    s.add_argument("--n-layers", type=int, default=2)
    s.add_argument("--n-heads", type=int, default=4)
    s.add_argument("--d-ff", type=int, default=64)
    s.add_argument("--max-len", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train_transformer)

    s = sub.add_parser("distill", help="distill a transformer into a DCSA")
    s.add_argument("--transformer", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--kind", choices=[k.value for k in DcsaKind], default="rnn")
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--alternation", choices=("per-example", "per-epoch"), default="per-example")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_distill)

    s = sub.add_parser("extract", help="extract a DFA from a DCSA with L*")
    d = ExtractionBudget()
    s.add_argument("--dcsa", required=True)
    s.add_argument("--max-abstract-states", type=int, default=d.max_abstract_states)
    s.add_argument("--max-refinements", type=int, default=d.max_refinements)
    s.add_argument("--probes", type=int, default=d.random_probe_count)
    s.add_argument("--max-states", type=int, default=d.max_hypothesis_states)
    s.add_argument("--seconds", type=float, default=d.wall_clock_seconds)
    s.add_argument("--probe-max-len", type=int, default=d.probe_max_len)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--log", help="write the extraction log here")
    s.add_argument("--dot", help="also write a DOT rendering here")
    s.set_defaults(fn=cmd_extract)

    s = sub.add_parser("evaluate", help="consistency rate of a model against a dataset")
    s.add_argument("--model", required=True, help="DFA, transformer or DCSA file")
    s.add_argument("--against", required=True, help="dataset file")
    s.add_argument("--reference", help="compare with this model instead of the dataset labels")
    s.add_argument("--split", choices=("train", "test", "all"), default="test")
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("pipeline", help="run every stage from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="output directory (overrides out_dir in the config)")
    s.add_argument("--reuse", help="take dataset and transformer from this earlier run")
    s.set_defaults(fn=cmd_pipeline)

    s = sub.add_parser("export-dot", help="render a DFA file as Graphviz DOT")
    s.add_argument("--dfa", required=True)
    s.add_argument("--name", default="dfa")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_export_dot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.error("a subcommand is required")
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except UsageError as e:
        parser.print_help(sys.stderr)
        print(f"enc2dfa: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"enc2dfa: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
