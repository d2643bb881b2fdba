"""Balanced labelled string datasets for a regular language."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from .automata import Alphabet, Dfa, UnknownSymbolError
from .rng import py_random

CLS_ID = 0
SEP_ID = 1
DATASET_FORMAT_VERSION = 1
RETRY_CAP = 100


class InfeasibleDatasetError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    size: int = 2000
    min_len: int = 1
    max_len: int = 24
    balance_tolerance: float = 0.02
    test_fraction: float = 0.2
    seed: int = 0
    # "error": every string is distinct, a too-sparse class is an error.
    # "repeat": a class with fewer distinct strings than it needs is sampled
    # with replacement (e.g. 1* has one string per length).
    sparse_policy: str = "error"

    def __post_init__(self):
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must be in (0, 1)")
        if self.size < 10:
            raise ValueError("size must be at least 10")
        if self.sparse_policy not in ("error", "repeat"):
            raise ValueError(f"unknown sparse_policy {self.sparse_policy!r}")
        if self.balance_tolerance < 0:
            raise ValueError("balance_tolerance must be non-negative")


@dataclass(frozen=True)
class LabeledSequence:
    tokens: str
    label: int


@dataclass(frozen=True)
class SequenceDataset:
    alphabet: Alphabet
    items: tuple
    split: tuple
    seed: int
    config: DatasetConfig = field(default_factory=DatasetConfig)

    def select(self, which: str) -> list[LabeledSequence]:
        if which == "all":
            return list(self.items)
        return [it for it, s in zip(self.items, self.split) if s == which]

    @property
    def train(self) -> list[LabeledSequence]:
        return self.select("train")

    @property
    def test(self) -> list[LabeledSequence]:
        return self.select("test")

    def positive_fraction(self) -> float:
        return sum(it.label for it in self.items) / len(self.items)


def encode_tokens(seq: str, alphabet: Alphabet, max_len: Optional[int] = None) -> list[int]:
    """``[CLS] + symbols + [SEP]`` as ids; 0 is [CLS], 1 is [SEP], symbols from 2."""
    if max_len is not None and len(seq) + 2 > max_len:
        raise ValueError(f"sequence of length {len(seq)} exceeds max_len {max_len} with specials")
    ids = [CLS_ID]
    for ch in seq:
        if ch not in alphabet:
            raise UnknownSymbolError(f"symbol {ch!r} not in alphabet {alphabet.symbols}")
        ids.append(alphabet.index(ch) + 2)
    ids.append(SEP_ID)
    return ids


def count_table(dfa: Dfa, max_len: int) -> list[list[list[int]]]:
    """``table[label][r][q]``: strings of length r leading from q to a label state."""
    n = dfa.n_states
    table = []
    for label in (0, 1):
        rows = [[int((q in dfa.accepting) == bool(label)) for q in range(n)]]
        for _ in range(max_len):
            prev = rows[-1]
            rows.append([sum(prev[t] for t in dfa.delta[q]) for q in range(n)])
        table.append(rows)
    return table


def _unrank(dfa: Dfa, rows, length: int, rank: int) -> str:
    q = dfa.initial
    out = []
    for rem in range(length, 0, -1):
        for i, t in enumerate(dfa.delta[q]):
            c = rows[rem - 1][t]
            if rank < c:
                out.append(dfa.alphabet.symbols[i])
                q = t
                break
            rank -= c
    return "".join(out)


def generate_dataset(dfa: Dfa, config: DatasetConfig) -> SequenceDataset:
    """Sample a balanced dataset; each (length, label) cell is sampled uniformly."""
    table = count_table(dfa, config.max_len)
    lengths = range(config.min_len, config.max_len + 1)
    n_pos = (config.size + 1) // 2
    need = {1: n_pos, 0: config.size - n_pos}
    dedup = {}
    for label in (1, 0):
        available = sum(table[label][L][dfa.initial] for L in lengths)
        if available == 0:
            raise InfeasibleDatasetError(
                f"no strings with label {label} of length {config.min_len}..{config.max_len}")
        dedup[label] = available >= need[label]
        if not dedup[label] and config.sparse_policy == "error":
            raise InfeasibleDatasetError(
                f"label {label}: only {available} distinct strings of length "
                f"{config.min_len}..{config.max_len}, need {need[label]}")

    rng = py_random(config.seed, "data")
    seen: set[str] = set()
    used = {(label, L): 0 for label in (0, 1) for L in lengths}
    items = []
    for i in range(config.size):
        label = 1 if i % 2 == 0 else 0
        rows = table[label]
        while True:
            L = rng.randint(config.min_len, config.max_len)
            cell = rows[L][dfa.initial]
            if cell == 0 or (dedup[label] and used[(label, L)] >= cell):
                continue
            for _ in range(RETRY_CAP):
                s = _unrank(dfa, rows, L, rng.randrange(cell))
                if not dedup[label] or s not in seen:
                    break
            else:
                continue
            break
        seen.add(s)
        used[(label, L)] += 1
        if dfa.accepts(s) != bool(label):
            raise AssertionError(f"sampler produced mislabelled string {s!r}")
        items.append(LabeledSequence(s, label))

    frac = sum(it.label for it in items) / len(items)
    if abs(frac - 0.5) > config.balance_tolerance:
        raise InfeasibleDatasetError(
            f"positive fraction {frac:.4f} outside 1/2 +- {config.balance_tolerance}")
    split = _split(items, config)
    return SequenceDataset(dfa.alphabet, tuple(items), split, config.seed, config)


def _split(items: Sequence[LabeledSequence], config: DatasetConfig) -> tuple:
    # stratified by label; a function of (seed, config) only
    rng = py_random(config.seed, "split")
    tags = ["train"] * len(items)
    for label in (1, 0):
        idx = [k for k, it in enumerate(items) if it.label == label]
        rng.shuffle(idx)
        n_test = round(config.test_fraction * len(idx))
        if len(idx) >= 2:
            n_test = min(max(n_test, 1), len(idx) - 1)
        for k in idx[:n_test]:
            tags[k] = "test"
    if "test" not in tags or "train" not in tags:
        raise InfeasibleDatasetError("both splits must be non-empty")
    return tuple(tags)


# ---------------------------------------------------------------------------
# persistence


def _item_line(item: LabeledSequence, split: str) -> str:
    return json.dumps({"tokens": item.tokens, "label": item.label, "split": split})


def save_dataset(ds: SequenceDataset, path) -> None:
    lines = [_item_line(it, s) for it, s in zip(ds.items, ds.split)]
    body = "".join(line + "\n" for line in lines)
    header = {
        "version": DATASET_FORMAT_VERSION,
        "alphabet": list(ds.alphabet.symbols),
        "seed": ds.seed,
        "config": asdict(ds.config),
        "n_items": len(lines),
        "sha256": hashlib.sha256(body.encode("utf-8")).hexdigest(),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(header) + "\n")
        f.write(body)


def load_dataset(path) -> SequenceDataset:
    with open(path, encoding="utf-8", newline="") as f:
        text = f.read()
    lines = text.split("\n")
    if not lines or not lines[0]:
        raise DatasetFormatError("missing header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"malformed header: {e}") from None
    if header.get("version") != DATASET_FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {header.get('version')!r}")
    if not text.endswith("\n"):
        raise DatasetFormatError("file is truncated (no final newline)")
    body_lines = lines[1:-1]
    if len(body_lines) != header.get("n_items"):
        raise DatasetFormatError(f"expected {header.get('n_items')} items, found {len(body_lines)}")
    alphabet = Alphabet(header["alphabet"])
    items, split = [], []
    for lineno, line in enumerate(body_lines, start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"line {lineno}: {e}") from None
        if obj.get("label") not in (0, 1) or isinstance(obj.get("label"), bool):
            raise DatasetFormatError(f"line {lineno}: label must be 0 or 1, got {obj.get('label')!r}")
        if obj.get("split") not in ("train", "test"):
            raise DatasetFormatError(f"line {lineno}: bad split {obj.get('split')!r}")
        tokens = obj.get("tokens")
        if not isinstance(tokens, str) or not tokens:
            raise DatasetFormatError(f"line {lineno}: tokens must be a non-empty string")
        alphabet.check(tokens)
        items.append(LabeledSequence(tokens, obj["label"]))
        split.append(obj["split"])
    body = "".join(line + "\n" for line in body_lines)
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != header.get("sha256"):
        raise DatasetFormatError("checksum mismatch")
    config = DatasetConfig(**header["config"])
    return SequenceDataset(alphabet, tuple(items), tuple(split), header["seed"], config)
