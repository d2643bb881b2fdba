"""Built-in benchmark languages.

The seven Tomita grammars (Tomita 1982) plus parity, divisibility and
bounded-depth bracket languages:

    tomita1  1*
    tomita2  (10)*
    tomita3  complement of ((0|1)*0)*1(11)*(0(0|1)*1)*0(00)*(1(0|1)*)*
    tomita4  no "000" substring
    tomita5  even number of 0s and even number of 1s
    tomita6  (#0 - #1) divisible by 3
    tomita7  0*1*0*1*
    parity   even number of 1s
    modN     binary value divisible by N (empty string has value 0)
    dN       D_0 = ε, D_n = (0 D_{n-1} 1)*
"""

from __future__ import annotations

from .automata import Alphabet, Dfa, minimize, parse_regex, regex_to_dfa

BINARY = Alphabet("01")
AB = Alphabet("ab")

TOMITA3_REJECT_REGEX = "((0|1)*0)*1(11)*(0(0|1)*1)*0(00)*(1(0|1)*)*"

_REGEXES = {
    "tomita1": ("1*", BINARY),
    "tomita2": ("(10)*", BINARY),
    "tomita7": ("0*1*0*1*", BINARY),
    "aa_star": ("(aa)*", AB),
    "abab_star": ("(abab)*", AB),
}


def dyck_regex(depth: int) -> str:
    """Regex for D_depth built by unrolling D_n = (0 D_{n-1} 1)*."""
    if depth < 0:
        raise ValueError("depth must be non-negative")
    text = ""
    for _ in range(depth):
        text = f"(0{text}1)*"
    return text or "ε"


def mod_dfa(n: int) -> Dfa:
    """Binary strings read most-significant bit first; state = value mod n."""
    delta = [[(2 * r) % n, (2 * r + 1) % n] for r in range(n)]
    return minimize(Dfa(BINARY, n, 0, {0}, delta))


def _counter_dfa(accept) -> Dfa:
    # states are (#0 mod 6, #1 mod 6); enough for every counting grammar here
    states = [(i, j) for i in range(6) for j in range(6)]
    index = {s: k for k, s in enumerate(states)}
    delta = [[index[((i + 1) % 6, j)], index[(i, (j + 1) % 6)]] for i, j in states]
    accepting = {index[s] for s in states if accept(*s)}
    return minimize(Dfa(BINARY, len(states), index[(0, 0)], accepting, delta))


def _no_000() -> Dfa:
    # state = length of the current trailing run of 0s, 3 = dead
    delta = [[1, 0], [2, 0], [3, 0], [3, 3]]
    return minimize(Dfa(BINARY, 4, 0, {0, 1, 2}, delta))


def _build(name: str) -> Dfa:
    if name in _REGEXES:
        text, alphabet = _REGEXES[name]
        return regex_to_dfa(parse_regex(text, alphabet), alphabet)
    if name == "tomita3":
        return regex_to_dfa(parse_regex(TOMITA3_REJECT_REGEX, BINARY), BINARY).complement()
    if name == "tomita4":
        return _no_000()
    if name == "tomita5":
        return _counter_dfa(lambda z, o: z % 2 == 0 and o % 2 == 0)
    if name == "tomita6":
        return _counter_dfa(lambda z, o: (z - o) % 3 == 0)
    if name == "parity":
        return _counter_dfa(lambda z, o: o % 2 == 0)
    if name.startswith("mod") and name[3:].isdigit():
        return mod_dfa(int(name[3:]))
    if name.startswith("d") and name[1:].isdigit():
        return regex_to_dfa(parse_regex(dyck_regex(int(name[1:])), BINARY), BINARY)
    raise KeyError(name)


BUILTIN_NAMES = (
    "tomita1", "tomita2", "tomita3", "tomita4", "tomita5", "tomita6", "tomita7",
    "mod2", "mod3", "mod4", "mod5", "parity", "d2", "d4", "aa_star", "abab_star",
)

_cache: dict[str, Dfa] = {}


def builtin_language(name: str) -> Dfa:
    """Minimal DFA of a named benchmark grammar (see module docstring)."""
    if name not in BUILTIN_NAMES:
        raise KeyError(f"unknown grammar {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    if name not in _cache:
        _cache[name] = minimize(_build(name))
    return _cache[name]
