"""Acceptance suite: one PASS/FAIL line per criterion, printed in the terminal summary.

Criteria 4-8 train models with the single-CPU budget in ``enc2dfa.experiments.DESK``.
Finished runs are cached under $ENC2DFA_ACCEPTANCE_RUNS (default runs/acceptance)
keyed by config digest; delete that directory to recompute from scratch.
Skip the training-heavy part with ``-m "not slow"``.
"""

import functools
import itertools
import os
from pathlib import Path

import numpy as np
import pytest

from enc2dfa import autograd as ag
from enc2dfa.automata import equivalent, minimize
from enc2dfa.dataset import DatasetConfig, load_dataset
from enc2dfa.dcsa import DcsaKind, DcsaModel, build_dcsa, classify_batch, run_full, run_tensor
from enc2dfa.experiments import DESK, HARD, LEARNABLE, UNLEARNABLE, experiment_config, run_cached
from enc2dfa.extraction import extract_dfa_from_dcsa
from enc2dfa.grammars import BINARY, BUILTIN_NAMES, builtin_language
from enc2dfa.lstar import exact_teacher, lstar
from enc2dfa.metrics import triangle_bound_holds
from enc2dfa.pipeline import PipelineConfig
from enc2dfa.transformer import TransformerConfig, TransformerModel, build_transformer, loss_tensor
from oracles import ORACLES, all_strings

ROOT = Path(os.environ.get("ENC2DFA_ACCEPTANCE_RUNS", Path(__file__).resolve().parents[1] / "runs" / "acceptance"))
RETRY_SEEDS = (0, 1, 2)


@pytest.fixture
def verdict(pytestconfig):
    """Record and print the criterion line, then fail the test if it did not pass."""
    def record(key, title, ok, detail):
        line = f"criterion {key} ({title}): {'PASS' if ok else 'FAIL'} | {detail}"
        pytestconfig.acceptance_lines[key] = line
        print(line)
        assert ok, line
    return record


@functools.lru_cache(maxsize=None)
def run(grammar, kind="rnn", alpha=1.0, seed=0):
    cfg = experiment_config(grammar, DESK, kind=kind, alpha=alpha, seed=seed)
    base = None
    if kind != "rnn" or alpha != 1.0:
        base = experiment_config(grammar, DESK, seed=seed)
    report, out = run_cached(cfg, ROOT, reuse_from=base)
    return report, out


def test_criterion_1_exact_teacher_lstar(verdict):
    bad = []
    for name in BUILTIN_NAMES:
        target = builtin_language(name)
        res = lstar(*exact_teacher(target), target.alphabet)
        if equivalent(res.dfa, target) is not None or res.dfa.n_states != minimize(target).n_states:
            bad.append(name)
    verdict("01", "exact-teacher L* recovers the minimal DFA", not bad,
            f"{len(BUILTIN_NAMES) - len(bad)}/{len(BUILTIN_NAMES)} grammars" + (f"; wrong: {bad}" if bad else ""))


def test_criterion_2_oracle_agreement(verdict):
    bad = {}
    total = 0
    for name in BUILTIN_NAMES:
        dfa = builtin_language(name)
        words = list(all_strings("".join(dfa.alphabet.symbols), 12))
        total += len(words)
        wrong = [w for w in words if dfa.accepts(w) != ORACLES[name](w)]
        if wrong:
            bad[name] = wrong[0]
    verdict("02", "builtin DFAs agree with brute-force oracles up to length 12", not bad,
            f"{total} strings over 16 grammars" + (f"; first disagreements {bad}" if bad else ""))


def test_criterion_3_gradient_checks(verdict):
    errs = {}
    tcfg = TransformerConfig.for_alphabet(BINARY)
    model = build_transformer(tcfg, BINARY, seed=11)
    model.params.flat[:] += np.random.default_rng(0).normal(0, 0.1, model.params.size)
    ids = np.array(model.encode("0110100"))
    errs["transformer"] = ag.grad_check(lambda P: loss_tensor(P, ids, 1, tcfg), model.params, probe_count=200)
    for kind in DcsaKind:
        dcsa = build_dcsa(kind, model, seed=12)
        dcsa.params.flat[:] += np.random.default_rng(1).normal(0, 0.3, dcsa.params.size)
        w = np.linspace(-1, 1, dcsa.full_dim)
        errs[kind.value] = ag.grad_check(lambda P: ag.sum_(ag.mul(run_tensor(dcsa, P, [2, 3, 3, 2, 3, 2]), w)),
                                         dcsa.params, probe_count=200, seed=2)
    worst = max(errs.values())
    verdict("03", "max relative gradient error <= 1e-4 on 200 coordinates", worst <= 1e-4,
            ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))


@pytest.mark.slow
def test_criterion_4_learnable_grammars(verdict):
    parts, ok = [], True
    for g in LEARNABLE:
        tried = []
        for seed in RETRY_SEEDS:
            report, _ = run(g, seed=seed)
            t = report.splits["test"]
            tried.append(f"{t['C_LT']:.4f}/{t['C_TA']:.4f}")
            if t["C_LT"] >= 0.99 and t["C_TA"] >= 0.99:
                break
        else:
            ok = False
        parts.append(f"{g} {tried[-1]}" + (f" (seed {seed}; earlier {tried[:-1]})" if seed else ""))
    verdict("04", "learnable grammars: test C(L,T) and C(T,A) >= 0.99", ok, "; ".join(parts))


@pytest.mark.slow
def test_criterion_5_hard_learnable(verdict):
    need = {"tomita3": 0.90, "d2": 0.95, "d4": 0.90}
    parts, ok = [], True
    for g in HARD:
        t = run(g)[0].splits["test"]
        ok &= t["C_TA"] >= need[g]
        parts.append(f"{g} C(T,A)={t['C_TA']:.4f} (need {need[g]}, C(L,T)={t['C_LT']:.4f})")
    verdict("05", "hard-but-learnable grammars", ok, "; ".join(parts))


@pytest.mark.slow
def test_criterion_5b_cell_variants(verdict):
    base = run("tomita3")[0].splits["test"]["C_TA"]
    vals = {k: run("tomita3", kind=k)[0].splits["test"]["C_TA"] for k in ("gru", "lstm")}
    ok = all(abs(v - base) <= 0.08 for v in vals.values())
    verdict("05b", "tomita3 C(T,A) with GRU/LSTM within 0.08 of RNN", ok,
            f"rnn {base:.4f}, " + ", ".join(f"{k} {v:.4f}" for k, v in vals.items()))


@pytest.mark.slow
def test_criterion_6_unlearnable(verdict):
    parts, ok = [], True
    for g in UNLEARNABLE:
        t = run(g)[0].splits["test"]
        ok &= t["C_TA"] >= 0.60
        band = "in" if 0.45 <= t["C_LT"] <= 0.60 else "outside"
        parts.append(f"{g} C(L,T)={t['C_LT']:.4f} ({band} 0.45-0.60) C(T,A)={t['C_TA']:.4f}")
    verdict("06", "unlearnable grammars: C(T,A) >= 0.60, C(L,T) report-only", ok, "; ".join(parts))


@pytest.mark.slow
def test_criterion_7_alignment_ablation(verdict):
    a3, u3 = run("tomita3")[0], run("tomita3", alpha=0.0)[0]
    a2, u2 = run("d2")[0], run("d2", alpha=0.0)[0]
    checks = {
        "Diff1": a3.diff1 < u3.diff1,
        "Diff2": a3.diff2 < u3.diff2,
        "tomita3 C(T,A)": a3.splits["test"]["C_TA"] >= u3.splits["test"]["C_TA"],
        "d2 C(T,A)": a2.splits["test"]["C_TA"] >= u2.splits["test"]["C_TA"],
    }
    detail = (f"tomita3 Diff1 {a3.diff1:.3f} vs {u3.diff1:.3f}, Diff2 {a3.diff2:.3f} vs {u3.diff2:.3f}, "
              f"C(T,A) {a3.splits['test']['C_TA']:.4f} vs {u3.splits['test']['C_TA']:.4f}; "
              f"d2 C(T,A) {a2.splits['test']['C_TA']:.4f} vs {u2.splits['test']['C_TA']:.4f} (aligned vs unaligned)")
    failed = [k for k, v in checks.items() if not v]
    verdict("07", "alignment lowers Diff_p and does not lower C(T,A)", not failed,
            detail + (f"; failed: {failed}" if failed else ""))


def _accepted_seed(g):
    for seed in RETRY_SEEDS:
        t = run(g, seed=seed)[0].splits["test"]
        if t["C_LT"] >= 0.99 and t["C_TA"] >= 0.99:
            return seed
    return None


def _first_disagreement(dcsa, lang, min_len=1, max_len=12):
    """Shortest string in the length range where the DCSA and the language differ, or None.

    The datasets never contain the empty string, so the range starts at 1.
    """
    for n in range(min_len, max_len + 1):
        words = ["".join(t) for t in itertools.product(lang.alphabet.symbols, repeat=n)]
        got = classify_batch(dcsa, words)
        for w, y in zip(words, got):
            if bool(y) != lang.accepts(w):
                return w
    return None


@pytest.mark.slow
def test_criterion_8_interpretability(verdict):
    # "fully learned": the extracted machine agrees with L on every string of length 1-12,
    # not only on the sampled test split
    full, partial = [], []
    for g in LEARNABLE:
        seed = _accepted_seed(g)
        if seed is None:
            continue
        report, out = run(g, seed=seed)
        miss = _first_disagreement(DcsaModel.load(out / "dcsa.json"), builtin_language(g))
        if miss is None:
            full.append((g, report.dfa_states, report.minimal_dfa_states))
        else:
            partial.append(f"{g} |A|={report.dfa_states} (min {report.minimal_dfa_states}, DCSA wrong on {miss!r})")
    ok = bool(full) and all(n <= m + 2 for _, n, m in full)
    mod3 = run("mod3")[0]
    pre = mod3.extraction["max_hypothesis_size"]
    detail = (", ".join(f"{g} |A|={n} (min {m})" for g, n, m in full) or "no fully learned grammar")
    if partial:
        detail += "; not fully learned, report-only: " + ", ".join(partial)
    detail += (f"; mod3 largest hypothesis {pre} states, {pre / mod3.minimal_dfa_states:.1f}x minimal "
               f"(report-only, expected >= 3x)")
    verdict("08", "fully learned grammars extract to <= minimal + 2 states", ok, detail)


def _all_runs():
    out = []
    for g in LEARNABLE + HARD + UNLEARNABLE:
        out.append(run(g))
    out += [run("tomita3", kind="gru"), run("tomita3", kind="lstm"), run("tomita3", alpha=0.0), run("d2", alpha=0.0)]
    return out


@pytest.mark.slow
def test_criterion_9_properties(verdict):
    problems = []
    runs = _all_runs()

    # observation table closed and consistent at each conjecture (exact teachers and a trained DCSA)
    flags = []
    for name in BUILTIN_NAMES:
        target = builtin_language(name)
        lstar(*exact_teacher(target), target.alphabet,
              on_conjecture=lambda t: flags.append(t.is_closed() and t.is_consistent()))
    t3_dir = run("tomita3")[1]
    dcsa = DcsaModel.load(t3_dir / "dcsa.json")
    budget = PipelineConfig.load(t3_dir / "config.json").resolved().extraction
    extract_dfa_from_dcsa(dcsa, budget, seed=4,
                          on_conjecture=lambda t: flags.append(t.is_closed() and t.is_consistent()))
    if not all(flags):
        problems.append("table not closed/consistent at a conjecture")

    rng = np.random.default_rng(0)
    for report, out in runs:
        log = report.extraction
        counts = log["leaf_counts"]
        if any(b <= a for a, b in zip(counts, counts[1:])):
            problems.append(f"{out.name}: leaf counts not increasing")
        transformer = TransformerModel.load(out / "transformer.json")
        dcsa = DcsaModel.load(out / "dcsa.json")
        cls = transformer.classifier_params()
        if not (np.array_equal(cls["weight"], dcsa.classifier["weight"])
                and np.array_equal(cls["bias"], dcsa.classifier["bias"])):
            problems.append(f"{out.name}: classifier changed")
        for _ in range(20):
            x = "".join(rng.choice(dcsa.alphabet.symbols, size=rng.integers(0, 12)))
            a = rng.choice(dcsa.alphabet.symbols)
            if not np.allclose(dcsa.step(run_full(dcsa, x), dcsa.symbol_id(a)), run_full(dcsa, x + a),
                               rtol=0, atol=1e-12):
                problems.append(f"{out.name}: fold law fails on {x!r}+{a!r}")
                break
        for split, m in report.splits.items():
            if not triangle_bound_holds(m["C_LT"], m["C_TA"], m["C_LA"]):
                problems.append(f"{out.name}: coherence bound fails on {split}")
        ds = load_dataset(out / "dataset.jsonl")
        lang = builtin_language(report.config["grammar"])
        if any(lang.accepts(it.tokens) != bool(it.label) for it in ds.items):
            problems.append(f"{out.name}: wrong labels in dataset")
        tol = DatasetConfig(**report.config["dataset"]).balance_tolerance
        if abs(ds.positive_fraction() - 0.5) > tol:
            problems.append(f"{out.name}: positive fraction {ds.positive_fraction():.3f}")
    verdict("09", "property suites on every acceptance run", not problems,
            f"{len(runs)} runs, {len(flags)} conjectures checked" + (f"; {problems}" if problems else ""))


@pytest.mark.slow
def test_runtime_budget(verdict):
    secs = {out.name: sum(r.timings.values()) for r, out in _all_runs()}
    worst = max(secs, key=secs.get)
    total = sum(secs.values())
    verdict("10", "each end-to-end run <= 10 minutes", secs[worst] <= 600,
            f"slowest {worst} {secs[worst]:.0f}s, total training+extraction {total / 60:.1f} min over {len(secs)} runs")
