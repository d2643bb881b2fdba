"""DFA extraction from a DCSA: L* against partition-based abstraction."""

from __future__ import annotations

import logging
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .automata import Dfa, minimize
from .dcsa import DcsaModel, classify_batch
from .lstar import ObservationTable, lstar
from .rng import generator

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExtractionBudget:
    max_abstract_states: int = 400
    max_refinements: int = 100
    random_probe_count: int = 2000
    max_hypothesis_states: int = 64
    wall_clock_seconds: float = 300.0
    probe_max_len: int = 48  # twice the default training max_len

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value <= 0:
                raise ValueError(f"{name} must be positive")


# ---------------------------------------------------------------------------
# partitions


class CannotSplit(ValueError):
    pass


@dataclass(frozen=True)
class _Leaf:
    leaf_id: int


@dataclass(frozen=True)
class _Axis:
    dim: int
    threshold: float
    low: object
    high: object


@dataclass(frozen=True)
class _Oblique:
    weight: tuple
    bias: float
    low: object  # w.v + b <= 0
    high: object


class Partition:
    """Binary decision tree over state vectors; leaves carry dense ids."""

    def __init__(self, root=None, n_leaves: int = 1):
        self.root = root if root is not None else _Leaf(0)
        self.n_leaves = n_leaves

    @classmethod
    def by_classifier(cls, dcsa: DcsaModel) -> "Partition":
        """Root split on the frozen classifier's decision (logit1 - logit0 > 0)."""
        w = dcsa.classifier["weight"]
        weight = np.zeros(dcsa.full_dim)
        weight[: dcsa.state_dim] = w[:, 1] - w[:, 0]
        bias = float(dcsa.classifier["bias"][1] - dcsa.classifier["bias"][0])
        return cls(_Oblique(tuple(weight), bias, _Leaf(0), _Leaf(1)), 2)

    def locate(self, v: np.ndarray) -> int:
        node = self.root
        while not isinstance(node, _Leaf):
            if isinstance(node, _Axis):
                node = node.high if v[node.dim] > node.threshold else node.low
            else:
                node = node.high if float(np.dot(node.weight, v)) + node.bias > 0 else node.low
        return node.leaf_id

    __call__ = locate

    def refine(self, leaf_id: int, a: np.ndarray, b: np.ndarray) -> "Partition":
        return refine_partition(self, leaf_id, a, b)

    def leaves(self) -> list[int]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, _Leaf):
                out.append(node.leaf_id)
            else:
                stack.extend((node.low, node.high))
        return sorted(out)


def refine_partition(partition: Partition, leaf_id: int, a: np.ndarray, b: np.ndarray) -> Partition:
    """Split one leaf at the midpoint of the coordinate where a and b differ most.

    ``a`` keeps the old leaf id, ``b`` gets the new id ``n_leaves``.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if partition.locate(a) != leaf_id or partition.locate(b) != leaf_id:
        raise ValueError(f"both vectors must lie in leaf {leaf_id}")
    gap = np.abs(a - b)
    dim = int(np.argmax(gap))
    threshold = float((a[dim] + b[dim]) / 2)
    if gap[dim] == 0 or not min(a[dim], b[dim]) <= threshold < max(a[dim], b[dim]):
        raise CannotSplit("vectors are identical (or adjacent floats) and cannot be separated")
    new_id = partition.n_leaves
    a_leaf, b_leaf = _Leaf(leaf_id), _Leaf(new_id)
    split = _Axis(dim, threshold, *((b_leaf, a_leaf) if a[dim] > threshold else (a_leaf, b_leaf)))

    def rebuild(node):
        if isinstance(node, _Leaf):
            return split if node.leaf_id == leaf_id else node
        return type(node)(*[getattr(node, f) for f in node.__dataclass_fields__ if f not in ("low", "high")],
                          rebuild(node.low), rebuild(node.high))

    return Partition(rebuild(partition.root), partition.n_leaves + 1)


# ---------------------------------------------------------------------------
# membership oracle


class MembershipOracle:
    """Cached ``x -> dcsa label``; final states are cached per prefix too."""

    def __init__(self, dcsa: DcsaModel):
        self.dcsa = dcsa
        self._states: dict[str, np.ndarray] = {"": dcsa.initial_state()}
        self._labels: dict[str, bool] = {}
        self._lock = threading.Lock()
        self.evaluations = 0
        self.cache_hits = 0
        self._ids = {a: dcsa.symbol_id(a) for a in dcsa.alphabet}

    def state(self, x: str) -> np.ndarray:
        s = self._states.get(x)
        if s is not None:
            return s
        k = len(x)
        while x[:k] not in self._states:
            k -= 1
        s = self._states[x[:k]]
        for i in range(k, len(x)):
            if x[i] not in self._ids:
                raise ValueError(f"symbol {x[i]!r} not in alphabet")
            s = self.dcsa.step(s, self._ids[x[i]])
            with self._lock:
                self._states.setdefault(x[: i + 1], s)
        return s

    def __call__(self, x: str) -> bool:
        label = self._labels.get(x)
        if label is not None:
            with self._lock:
                self.cache_hits += 1
            return label
        label = bool(self.dcsa.label_of_state(self.state(x)))
        with self._lock:
            self.evaluations += 1
            self._labels[x] = label
        return label

    def cached_items(self) -> dict[str, bool]:
        return dict(self._labels)


def membership_oracle(dcsa: DcsaModel) -> MembershipOracle:
    return MembershipOracle(dcsa)


# ---------------------------------------------------------------------------
# abstraction


@dataclass
class AbstractAutomaton:
    initial: int
    representatives: dict  # leaf id -> continuous state
    transitions: dict  # (leaf id, symbol index) -> leaf id
    accepting: dict  # leaf id -> bool
    incomplete: bool = False

    @property
    def states(self) -> list[int]:
        return list(self.representatives)


def build_abstract_automaton(dcsa: DcsaModel, partition: Partition, budget: ExtractionBudget,
                             oracle: Optional[MembershipOracle] = None) -> AbstractAutomaton:
    """BFS from s0; the first continuous state to reach a cell represents it."""
    s0 = dcsa.initial_state()
    q0 = partition.locate(s0)
    reps = {q0: s0}
    accepting = {q0: bool(dcsa.label_of_state(s0))}
    transitions = {}
    incomplete = False
    queue = deque([q0])
    ids = [dcsa.symbol_id(a) for a in dcsa.alphabet]
    while queue:
        q = queue.popleft()
        for i, sid in enumerate(ids):
            nxt = dcsa.step(reps[q], sid)
            leaf = partition.locate(nxt)
            if leaf not in reps:
                if len(reps) >= budget.max_abstract_states:
                    incomplete = True
                    continue
                reps[leaf] = nxt
                accepting[leaf] = bool(dcsa.label_of_state(nxt))
                queue.append(leaf)
            transitions[(q, i)] = leaf
    return AbstractAutomaton(q0, reps, transitions, accepting, incomplete)


def _product_disagreement(hyp: Dfa, abst: AbstractAutomaton) -> Optional[str]:
    start = (hyp.initial, abst.initial)
    parent = {start: None}
    queue = deque([start])
    symbols = hyp.alphabet.symbols
    while queue:
        pair = queue.popleft()
        h, q = pair
        if (h in hyp.accepting) != abst.accepting[q]:
            out = []
            while parent[pair] is not None:
                pair, ch = parent[pair]
                out.append(ch)
            return "".join(reversed(out))
        for i, ch in enumerate(symbols):
            q2 = abst.transitions.get((q, i))
            if q2 is None:
                continue
            nxt = (hyp.delta[h][i], q2)
            if nxt not in parent:
                parent[nxt] = (pair, ch)
                queue.append(nxt)
    return None


class AbstractionTeacher:
    """Equivalence oracle: abstraction product search, refinement, random probes."""

    def __init__(self, dcsa: DcsaModel, budget: ExtractionBudget, seed: int = 0,
                 oracle: Optional[MembershipOracle] = None, partition: Optional[Partition] = None):
        self.dcsa = dcsa
        self.budget = budget
        self.oracle = oracle or MembershipOracle(dcsa)
        self.partition = partition or Partition.by_classifier(dcsa)
        self.refinements = 0
        self.rounds = 0
        self.warnings: list[str] = []
        self.leaf_counts = [self.partition.n_leaves]
        self.abstraction_incomplete = False
        rng = generator(seed, "extraction-probes")
        symbols = np.array(dcsa.alphabet.symbols)
        lengths = rng.integers(0, budget.probe_max_len + 1, size=budget.random_probe_count)
        probes = sorted({"".join(symbols[rng.integers(0, len(symbols), size=n)]) for n in lengths},
                        key=lambda s: (len(s), s))
        self.probes = probes
        self.probe_labels = classify_batch(dcsa, probes).astype(bool)

    def _conflict(self, w: str, abst: AbstractAutomaton):
        """Cell, representative and real state where the abstract path of w goes wrong."""
        q = abst.initial
        real = self.dcsa.initial_state()
        for i, ch in enumerate(w):
            k = self.dcsa.alphabet.index(ch)
            q_next = abst.transitions[(q, k)]
            real_next = self.oracle.state(w[: i + 1])
            if self.partition.locate(real_next) != q_next:
                return q, abst.representatives[q], real
            q, real = q_next, real_next
        return None

    def _probe(self, hyp: Dfa) -> Optional[str]:
        for s, label in zip(self.probes, self.probe_labels):
            if hyp.accepts(s) != label:
                return s
        return None

    def __call__(self, hyp: Dfa) -> Optional[str]:
        self.rounds += 1
        while self.refinements < self.budget.max_refinements:
            abst = build_abstract_automaton(self.dcsa, self.partition, self.budget)
            self.abstraction_incomplete |= abst.incomplete
            w = _product_disagreement(hyp, abst)
            if w is None:
                break
            if self.oracle(w) != hyp.accepts(w):
                return w
            conflict = self._conflict(w, abst)
            if conflict is None:
                self.warnings.append(f"no conflict found along {w!r}; falling back to probes")
                break
            cell, rep, real = conflict
            try:
                self.partition = refine_partition(self.partition, cell, rep, real)
            except CannotSplit as e:
                self.warnings.append(f"cell {cell}: {e}; falling back to probes")
                break
            self.refinements += 1
            self.leaf_counts.append(self.partition.n_leaves)
        else:
            self.warnings.append("refinement budget exhausted")
        return self._probe(hyp)


@dataclass
class ExtractionLog:
    membership_queries: int = 0
    cache_hits: int = 0
    equivalence_rounds: int = 0
    refinements: int = 0
    final_leaf_count: int = 0
    counterexamples: list = field(default_factory=list)
    wall_seconds: float = 0.0
    incomplete: bool = False
    reason: str = ""
    hypothesis_sizes: list = field(default_factory=list)
    max_hypothesis_size: int = 0
    leaf_counts: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def equivalence_query(hypothesis: Dfa, dcsa: DcsaModel, partition: Partition, budget: ExtractionBudget,
                      seed: int = 0) -> tuple[Optional[str], Partition]:
    """One stand-alone equivalence query; returns the counterexample and refined partition."""
    teacher = AbstractionTeacher(dcsa, budget, seed, partition=partition)
    return teacher(hypothesis), teacher.partition


def extract_dfa_from_dcsa(dcsa: DcsaModel, budget: ExtractionBudget = ExtractionBudget(),
                          seed: int = 0, on_conjecture=None) -> tuple[Dfa, ExtractionLog]:
    """Run L* with the DCSA as membership oracle and the abstraction teacher."""
    start = time.perf_counter()
    oracle = MembershipOracle(dcsa)
    teacher = AbstractionTeacher(dcsa, budget, seed, oracle=oracle)
    result = lstar(oracle, teacher, dcsa.alphabet, max_states=budget.max_hypothesis_states,
                   deadline=start + budget.wall_clock_seconds, on_conjecture=on_conjecture)
    dfa = minimize(result.dfa)
    warnings = list(teacher.warnings)
    if teacher.abstraction_incomplete:
        warnings.append("abstract-state budget reached while building an abstraction")
    entry = ExtractionLog(
        membership_queries=oracle.evaluations + oracle.cache_hits,
        cache_hits=oracle.cache_hits,
        equivalence_rounds=teacher.rounds,
        refinements=teacher.refinements,
        final_leaf_count=teacher.partition.n_leaves,
        counterexamples=result.counterexamples,
        wall_seconds=time.perf_counter() - start,
        incomplete=result.incomplete,
        reason=result.reason,
        hypothesis_sizes=result.hypothesis_sizes,
        max_hypothesis_size=max(result.hypothesis_sizes, default=dfa.n_states),
        leaf_counts=list(teacher.leaf_counts),
        warnings=warnings,
    )
    log.info("extracted %d-state DFA in %.1fs (%d EQ rounds, %d refinements%s)", dfa.n_states,
             entry.wall_seconds, entry.equivalence_rounds, entry.refinements,
             ", incomplete" if entry.incomplete else "")
    return dfa, entry


__all__ = [
    "AbstractAutomaton", "AbstractionTeacher", "CannotSplit", "ExtractionBudget", "ExtractionLog",
    "MembershipOracle", "ObservationTable", "Partition", "build_abstract_automaton",
    "equivalence_query", "extract_dfa_from_dcsa", "membership_oracle", "refine_partition",
]
