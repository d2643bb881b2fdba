"""Regular expressions, complete DFAs, minimization, equivalence and DOT export.

Sequences are plain ``str`` objects: every alphabet symbol is a single
character, so ``"0110"`` is the symbol sequence 0, 1, 1, 0 and ``""`` is the
empty string.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional

SPECIAL_TOKENS = ("[CLS]", "[SEP]")
_REGEX_META = set("()*+?|ε")
DFA_FORMAT_VERSION = 1


class RegexSyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownSymbolError(ValueError):
    pass


@dataclass(frozen=True)
class Alphabet:
    symbols: tuple[str, ...]

    def __init__(self, symbols: Iterable[str]):
        symbols = tuple(symbols)
        if not symbols:
            raise ValueError("alphabet must be non-empty")
        if len(set(symbols)) != len(symbols):
            raise ValueError(f"duplicate symbols in alphabet {symbols!r}")
        for s in symbols:
            if s in SPECIAL_TOKENS:
                raise ValueError(f"{s} is a reserved token")
            if not isinstance(s, str) or len(s) != 1:
                raise ValueError(f"symbols must be single characters, got {s!r}")
            if s in _REGEX_META:
                raise ValueError(f"{s!r} is a regex operator and cannot be a symbol")
        object.__setattr__(self, "symbols", symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def __contains__(self, symbol) -> bool:
        return symbol in self.symbols

    def index(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise UnknownSymbolError(f"symbol {symbol!r} not in alphabet {self.symbols}") from None

    def check(self, seq: str) -> None:
        for ch in seq:
            if ch not in self.symbols:
                raise UnknownSymbolError(f"symbol {ch!r} not in alphabet {self.symbols}")


# ---------------------------------------------------------------------------
# Regex AST


@dataclass(frozen=True)
class Epsilon:
    pass


@dataclass(frozen=True)
class Literal:
    symbol: str


@dataclass(frozen=True)
class Concat:
    left: "RegexAst"
    right: "RegexAst"


@dataclass(frozen=True)
class Union:
    left: "RegexAst"
    right: "RegexAst"


@dataclass(frozen=True)
class Star:
    inner: "RegexAst"


@dataclass(frozen=True)
class Plus:
    inner: "RegexAst"


@dataclass(frozen=True)
class Optional_:
    inner: "RegexAst"


RegexAst = (Epsilon, Literal, Concat, Union, Star, Plus, Optional_)


class _Parser:
    def __init__(self, text: str, alphabet: Alphabet):
        self.text = text
        self.alphabet = alphabet
        self.pos = 0

    def peek(self) -> Optional[str]:
        return self.text[self.pos] if self.pos < len(self.text) else None

    def parse(self):
        node = self.union()
        if self.pos != len(self.text):
            raise RegexSyntaxError(f"unexpected {self.text[self.pos]!r}", self.pos)
        return node

    def union(self):
        parts = [self.concat()]
        while self.peek() == "|":
            self.pos += 1
            parts.append(self.concat())
        node = parts[-1]
        for part in reversed(parts[:-1]):
            node = Union(part, node)
        return node

    def concat(self):
        parts = []
        while self.peek() is not None and self.peek() not in "|)":
            parts.append(self.repeat())
        if not parts:
            return Epsilon()
        node = parts[-1]
        for part in reversed(parts[:-1]):
            node = Concat(part, node)
        return node

    def repeat(self):
        node = self.atom()
        while self.peek() is not None and self.peek() in "*+?":
            op = self.text[self.pos]
            self.pos += 1
            node = {"*": Star, "+": Plus, "?": Optional_}[op](node)
        return node

    def atom(self):
        ch = self.peek()
        start = self.pos
        if ch == "(":
            self.pos += 1
            node = self.union()
            if self.peek() != ")":
                raise RegexSyntaxError("missing ')'", self.pos)
            self.pos += 1
            return node
        if ch == "ε":
            self.pos += 1
            return Epsilon()
        if ch in ("*", "+", "?"):
            raise RegexSyntaxError(f"nothing to repeat before {ch!r}", start)
        if ch not in self.alphabet:
            raise UnknownSymbolError(
                f"literal {ch!r} at position {start} not in alphabet {self.alphabet.symbols}"
            )
        self.pos += 1
        return Literal(ch)


def parse_regex(text: str, alphabet: Alphabet):
    """Parse ``text`` with the usual precedence: postfix ops > concat > ``|``.

    Concatenation and union nest to the right, so ``"abc"`` is
    ``Concat(a, Concat(b, c))``. ``ε`` or an empty group denotes the empty string.
    """
    return _Parser(text, alphabet).parse()


def regex_to_str(node) -> str:
    """Pretty-print an AST so that ``parse_regex`` gives back the same tree."""
    if isinstance(node, Epsilon):
        return "ε"
    if isinstance(node, Literal):
        return node.symbol
    if isinstance(node, Union):
        left = regex_to_str(node.left)
        if isinstance(node.left, Union):
            left = f"({left})"
        return f"{left}|{regex_to_str(node.right)}"
    if isinstance(node, Concat):
        left, right = regex_to_str(node.left), regex_to_str(node.right)
        if isinstance(node.left, (Union, Concat)):
            left = f"({left})"
        if isinstance(node.right, Union):
            right = f"({right})"
        return left + right
    op = {Star: "*", Plus: "+", Optional_: "?"}[type(node)]
    inner = regex_to_str(node.inner)
    if isinstance(node.inner, (Union, Concat, Epsilon)):
        inner = f"({inner})"
    return inner + op


# ---------------------------------------------------------------------------
# Thompson construction and subset construction


class _Nfa:
    def __init__(self):
        self.eps: list[list[int]] = []
        self.moves: list[dict[str, list[int]]] = []

    def new_state(self) -> int:
        self.eps.append([])
        self.moves.append({})
        return len(self.eps) - 1

    def build(self, node) -> tuple[int, int]:
        s, t = self.new_state(), self.new_state()
        if isinstance(node, Epsilon):
            self.eps[s].append(t)
        elif isinstance(node, Literal):
            self.moves[s].setdefault(node.symbol, []).append(t)
        elif isinstance(node, Concat):
            a0, a1 = self.build(node.left)
            b0, b1 = self.build(node.right)
            self.eps[s].append(a0)
            self.eps[a1].append(b0)
            self.eps[b1].append(t)
        elif isinstance(node, Union):
            for branch in (node.left, node.right):
                b0, b1 = self.build(branch)
                self.eps[s].append(b0)
                self.eps[b1].append(t)
        elif isinstance(node, (Star, Plus, Optional_)):
            i0, i1 = self.build(node.inner)
            self.eps[s].append(i0)
            self.eps[i1].append(t)
            if not isinstance(node, Plus):
                self.eps[s].append(t)
            if not isinstance(node, Optional_):
                self.eps[i1].append(i0)
        else:
            raise TypeError(f"not a regex node: {node!r}")
        return s, t

    def closure(self, states: Iterable[int]) -> frozenset[int]:
        seen = set(states)
        stack = list(seen)
        while stack:
            q = stack.pop()
            for r in self.eps[q]:
                if r not in seen:
                    seen.add(r)
                    stack.append(r)
        return frozenset(seen)


def regex_to_dfa(ast, alphabet: Alphabet) -> "Dfa":
    """Thompson NFA, subset construction, then Hopcroft minimization."""
    nfa = _Nfa()
    start, final = nfa.build(ast)
    init = nfa.closure([start])
    index = {init: 0}
    order = [init]
    delta: list[list[int]] = []
    i = 0
    while i < len(order):
        current = order[i]
        row = []
        for a in alphabet:
            targets = [r for q in current for r in nfa.moves[q].get(a, ())]
            nxt = nfa.closure(targets)
            if nxt not in index:
                index[nxt] = len(order)
                order.append(nxt)
            row.append(index[nxt])
        delta.append(row)
        i += 1
    accepting = {k for k, subset in enumerate(order) if final in subset}
    return minimize(Dfa(alphabet, len(order), 0, accepting, delta))


# ---------------------------------------------------------------------------
# DFA


@dataclass(frozen=True)
class Dfa:
    alphabet: Alphabet
    n_states: int
    initial: int
    accepting: frozenset
    delta: tuple

    def __init__(self, alphabet, n_states, initial, accepting, delta):
        if not isinstance(alphabet, Alphabet):
            alphabet = Alphabet(alphabet)
        delta = tuple(tuple(int(t) for t in row) for row in delta)
        accepting = frozenset(int(q) for q in accepting)
        if n_states < 1 or len(delta) != n_states:
            raise ValueError(f"delta has {len(delta)} rows for {n_states} states")
        for row in delta:
            if len(row) != len(alphabet):
                raise ValueError("delta must be total: one column per symbol")
            if any(t < 0 or t >= n_states for t in row):
                raise ValueError("transition target out of range")
        if not 0 <= initial < n_states:
            raise ValueError("initial state out of range")
        if any(q < 0 or q >= n_states for q in accepting):
            raise ValueError("accepting state out of range")
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "n_states", int(n_states))
        object.__setattr__(self, "initial", int(initial))
        object.__setattr__(self, "accepting", accepting)
        object.__setattr__(self, "delta", delta)

    def run(self, seq: str, state: Optional[int] = None) -> int:
        q = self.initial if state is None else state
        index = self.alphabet.index
        for ch in seq:
            q = self.delta[q][index(ch)]
        return q

    def accepts(self, seq: str) -> bool:
        return self.run(seq) in self.accepting

    __call__ = accepts

    def complement(self) -> "Dfa":
        rejecting = set(range(self.n_states)) - self.accepting
        return Dfa(self.alphabet, self.n_states, self.initial, rejecting, self.delta)

    def reachable(self) -> list[int]:
        """States reachable from the initial state, in BFS order."""
        seen = {self.initial}
        order = [self.initial]
        for q in order:
            for t in self.delta[q]:
                if t not in seen:
                    seen.add(t)
                    order.append(t)
        return order

    def to_json(self) -> dict:
        return {
            "version": DFA_FORMAT_VERSION,
            "alphabet": list(self.alphabet.symbols),
            "n_states": self.n_states,
            "initial": self.initial,
            "accepting": sorted(self.accepting),
            "delta": [list(row) for row in self.delta],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Dfa":
        if obj.get("version") != DFA_FORMAT_VERSION:
            raise ValueError(f"unsupported DFA format version {obj.get('version')!r}")
        return cls(Alphabet(obj["alphabet"]), obj["n_states"], obj["initial"],
                   obj["accepting"], obj["delta"])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=1)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "Dfa":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def accepts(dfa: Dfa, seq: str) -> bool:
    return dfa.accepts(seq)


def canonical(dfa: Dfa) -> Dfa:
    """Drop unreachable states and renumber the rest in BFS order."""
    order = dfa.reachable()
    new = {q: i for i, q in enumerate(order)}
    delta = [[new[t] for t in dfa.delta[q]] for q in order]
    accepting = {new[q] for q in order if q in dfa.accepting}
    return Dfa(dfa.alphabet, len(order), 0, accepting, delta)


def minimize(dfa: Dfa) -> Dfa:
    """Hopcroft partition refinement on the reachable part.

    The result is numbered canonically, so two minimal DFAs for the same
    language compare equal.
    """
    dfa = canonical(dfa)
    n, k = dfa.n_states, len(dfa.alphabet)
    inverse = [[[] for _ in range(n)] for _ in range(k)]
    for q in range(n):
        for a in range(k):
            inverse[a][dfa.delta[q][a]].append(q)

    acc = set(dfa.accepting)
    rej = set(range(n)) - acc
    blocks = [b for b in (acc, rej) if b]
    block_of = [0] * n
    for i, b in enumerate(blocks):
        for q in b:
            block_of[q] = i
    work = deque()
    if len(blocks) == 2:
        work.append(0 if len(blocks[0]) <= len(blocks[1]) else 1)
    in_work = set(work)

    while work:
        splitter = set(blocks[work.popleft()])
        in_work.clear()
        in_work.update(work)
        for a in range(k):
            pre = {p for q in splitter for p in inverse[a][q]}
            touched: dict[int, set] = {}
            for p in pre:
                touched.setdefault(block_of[p], set()).add(p)
            for b, inside in touched.items():
                if len(inside) == len(blocks[b]):
                    continue
                outside = blocks[b] - inside
                blocks[b] = inside
                blocks.append(outside)
                nb = len(blocks) - 1
                for q in outside:
                    block_of[q] = nb
                if b in in_work:
                    work.append(nb)
                    in_work.add(nb)
                else:
                    small = b if len(inside) <= len(outside) else nb
                    work.append(small)
                    in_work.add(small)

    delta = [[0] * k for _ in blocks]
    for i, b in enumerate(blocks):
        q = next(iter(b))
        delta[i] = [block_of[t] for t in dfa.delta[q]]
    accepting = {block_of[q] for q in dfa.accepting}
    return canonical(Dfa(dfa.alphabet, len(blocks), block_of[dfa.initial], accepting, delta))


def product(a: Dfa, b: Dfa, accept) -> Dfa:
    """Reachable product automaton; ``accept(x, y)`` combines the two flags."""
    if a.alphabet != b.alphabet:
        raise ValueError("alphabet mismatch")
    start = (a.initial, b.initial)
    index = {start: 0}
    order = [start]
    delta = []
    for p, q in order:
        row = []
        for x, y in zip(a.delta[p], b.delta[q]):
            if (x, y) not in index:
                index[(x, y)] = len(order)
                order.append((x, y))
            row.append(index[(x, y)])
        delta.append(row)
    accepting = {i for i, (p, q) in enumerate(order)
                 if accept(p in a.accepting, q in b.accepting)}
    return Dfa(a.alphabet, len(order), 0, accepting, delta)


def equivalent(a: Dfa, b: Dfa) -> Optional[str]:
    """Return ``None`` if the languages coincide, else a shortest witness.

    BFS over the product explores symbols in alphabet order, so among the
    shortest witnesses the first in that order is returned.
    """
    if a.alphabet != b.alphabet:
        raise ValueError(f"alphabet mismatch: {a.alphabet.symbols} vs {b.alphabet.symbols}")
    symbols = a.alphabet.symbols
    start = (a.initial, b.initial)
    parent = {start: None}
    queue = deque([start])
    while queue:
        pair = queue.popleft()
        p, q = pair
        if (p in a.accepting) != (q in b.accepting):
            out = []
            while parent[pair] is not None:
                pair, ch = parent[pair]
                out.append(ch)
            return "".join(reversed(out))
        for i, ch in enumerate(symbols):
            nxt = (a.delta[p][i], b.delta[q][i])
            if nxt not in parent:
                parent[nxt] = (pair, ch)
                queue.append(nxt)
    return None


def to_dot(dfa: Dfa, name: str = "dfa") -> str:
    lines = [f"digraph {name} {{", "  rankdir=LR;", '  __start [shape=point, label=""];']
    for q in range(dfa.n_states):
        shape = "doublecircle" if q in dfa.accepting else "circle"
        lines.append(f'  {q} [shape={shape}, label="{q}"];')
    lines.append(f"  __start -> {dfa.initial};")
    for q in range(dfa.n_states):
        grouped: dict[int, list[str]] = {}
        for i, t in enumerate(dfa.delta[q]):
            grouped.setdefault(t, []).append(dfa.alphabet.symbols[i])
        for t in sorted(grouped):
            label = ",".join(grouped[t])
            lines.append(f'  {q} -> {t} [label="{label}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
