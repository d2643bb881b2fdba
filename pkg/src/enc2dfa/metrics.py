"""Consistency rates between label functions."""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .automata import Dfa
from .dcsa import DcsaModel, classify_batch
from .transformer import TransformerModel

LabelFunction = Callable[[str], int]


def _as_strings(items: Iterable) -> list[str]:
    return [getattr(it, "tokens", it) for it in items]


def consistency(a: LabelFunction, b: LabelFunction, items: Iterable) -> float:
    """Fraction of items on which ``a`` and ``b`` give the same label."""
    seqs = _as_strings(items)
    if not seqs:
        raise ValueError("consistency over an empty item set")
    return sum(int(a(s)) == int(b(s)) for s in seqs) / len(seqs)


def agreement(labels_a: Sequence[int], labels_b: Sequence[int]) -> float:
    """Consistency rate from precomputed label vectors."""
    labels_a, labels_b = np.asarray(labels_a, dtype=int), np.asarray(labels_b, dtype=int)
    if labels_a.shape != labels_b.shape:
        raise ValueError(f"label vectors differ in length: {labels_a.shape} vs {labels_b.shape}")
    if labels_a.size == 0:
        raise ValueError("consistency over an empty item set")
    return float((labels_a == labels_b).mean())


def label_function(obj) -> LabelFunction:
    """Wrap a DFA, transformer or DCSA as ``str -> {0, 1}``."""
    if isinstance(obj, Dfa):
        return lambda s: int(obj.accepts(s))
    if isinstance(obj, (TransformerModel, DcsaModel)):
        return obj.label
    if callable(obj):
        return lambda s: int(obj(s))
    raise TypeError(f"cannot use {type(obj).__name__} as a label function")


def labels(obj, items: Iterable) -> np.ndarray:
    """Labels of ``obj`` on every item; batched for DCSA models."""
    seqs = _as_strings(items)
    if isinstance(obj, DcsaModel):
        return classify_batch(obj, seqs)
    fn = label_function(obj)
    return np.array([fn(s) for s in seqs], dtype=int)


def triangle_bound_holds(c_lt: float, c_ta: float, c_la: float, tol: float = 1e-12) -> bool:
    """C(L,A) >= C(L,T) + C(T,A) - 1: two agreement sets overlap at least that much."""
    return c_la >= c_lt + c_ta - 1 - tol
