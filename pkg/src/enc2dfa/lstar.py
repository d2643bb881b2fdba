"""Angluin's L* with an observation table.

Counterexamples are handled the classic way: the counterexample and all its
prefixes join the access strings S.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .automata import Alphabet, Dfa, equivalent

Membership = Callable[[str], bool]
Equivalence = Callable[[Dfa], Optional[str]]


class BudgetExceeded(Exception):
    pass


class ObservationTable:
    def __init__(self, alphabet: Alphabet, membership: Membership):
        self.alphabet = alphabet
        self.mq = membership
        self.S: list[str] = [""]
        self.E: list[str] = [""]
        self._S_set = {""}
        self.entries: dict[str, bool] = {}

    def _fill(self, s: str) -> None:
        for e in self.E:
            w = s + e
            if w not in self.entries:
                self.entries[w] = bool(self.mq(w))

    def row(self, s: str) -> tuple:
        self._fill(s)
        return tuple(self.entries[s + e] for e in self.E)

    def add_prefix(self, s: str) -> None:
        if s not in self._S_set:
            self._S_set.add(s)
            self.S.append(s)

    def add_suffix(self, e: str) -> None:
        if e not in self.E:
            self.E.append(e)

    def extensions(self):
        return (s + a for s in self.S for a in self.alphabet)

    def find_unclosed(self) -> Optional[str]:
        rows = {self.row(s) for s in self.S}
        for w in self.extensions():
            if self.row(w) not in rows:
                return w
        return None

    def find_inconsistency(self) -> Optional[str]:
        """A new suffix ``a + e`` separating two equal rows of S, if any."""
        by_row: dict[tuple, str] = {}
        for s in self.S:
            r = self.row(s)
            if r not in by_row:
                by_row[r] = s
                continue
            t = by_row[r]
            for a in self.alphabet:
                ra, ta = self.row(s + a), self.row(t + a)
                if ra != ta:
                    k = next(i for i, (x, y) in enumerate(zip(ra, ta)) if x != y)
                    return a + self.E[k]
        return None

    def is_closed(self) -> bool:
        return self.find_unclosed() is None

    def is_consistent(self) -> bool:
        return self.find_inconsistency() is None

    def n_distinct_rows(self) -> int:
        return len({self.row(s) for s in self.S})

    def hypothesis(self) -> Dfa:
        """DFA whose states are the distinct rows of S.

        On a table that is not closed, a missing row is mapped to the S-row at
        the smallest Hamming distance (only used for best-effort output when a
        budget runs out).
        """
        index: dict[tuple, int] = {}
        for s in self.S:
            index.setdefault(self.row(s), len(index))
        reps = list(index)

        def state_of(w):
            r = self.row(w)
            if r in index:
                return index[r]
            return min(range(len(reps)), key=lambda i: sum(x != y for x, y in zip(reps[i], r)))

        delta = [[0] * len(self.alphabet) for _ in reps]
        seen = set()
        for s in self.S:
            q = index[self.row(s)]
            if q in seen:
                continue
            seen.add(q)
            for i, a in enumerate(self.alphabet):
                delta[q][i] = state_of(s + a)
        accepting = {q for r, q in index.items() if r[0]}
        return Dfa(self.alphabet, len(reps), index[self.row("")], accepting, delta)


@dataclass
class LStarResult:
    dfa: Dfa
    incomplete: bool = False
    reason: str = ""
    equivalence_queries: int = 0
    counterexamples: list = field(default_factory=list)
    hypothesis_sizes: list = field(default_factory=list)


def lstar(membership: Membership, equivalence: Equivalence, alphabet: Alphabet,
          max_states: Optional[int] = None, deadline: Optional[float] = None,
          on_conjecture: Optional[Callable[[ObservationTable], None]] = None) -> LStarResult:
    """Learn a DFA from a membership oracle and an equivalence oracle.

    ``equivalence(h)`` returns ``None`` to accept ``h`` or a string on which
    ``h`` is wrong. ``max_states`` bounds the number of distinct rows and
    ``deadline`` is an absolute ``time.perf_counter()`` value; running out of
    either returns the best hypothesis so far with ``incomplete=True``.
    """
    table = ObservationTable(alphabet, membership)
    result = LStarResult(dfa=None)

    def over_budget() -> Optional[str]:
        if max_states is not None and table.n_distinct_rows() > max_states:
            return f"hypothesis exceeds {max_states} states"
        if deadline is not None and time.perf_counter() > deadline:
            return "wall-clock budget exhausted"
        return None

    while True:
        while True:
            reason = over_budget()
            if reason:
                result.incomplete, result.reason = True, reason
                if result.dfa is None:
                    result.dfa = table.hypothesis()
                return result
            w = table.find_unclosed()
            if w is not None:
                table.add_prefix(w)
                continue
            e = table.find_inconsistency()
            if e is not None:
                table.add_suffix(e)
                continue
            break

        hyp = table.hypothesis()
        if on_conjecture is not None:
            on_conjecture(table)
        result.dfa = hyp
        result.hypothesis_sizes.append(hyp.n_states)
        result.equivalence_queries += 1
        cex = equivalence(hyp)
        if cex is None:
            return result
        if hyp.accepts(cex) == bool(membership(cex)):
            raise ValueError(f"equivalence oracle returned {cex!r}, on which the hypothesis is right")
        result.counterexamples.append(cex)
        for i in range(len(cex) + 1):
            table.add_prefix(cex[: i])


def exact_teacher(target: Dfa) -> tuple[Membership, Equivalence]:
    """Oracles answering from a known DFA."""
    return target.accepts, lambda hyp: equivalent(hyp, target)
