import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from enc2dfa.automata import Alphabet, Dfa
from enc2dfa.dataset import (
    DatasetConfig, DatasetFormatError, InfeasibleDatasetError, _unrank, count_table, encode_tokens,
    generate_dataset, load_dataset, save_dataset,
)
from enc2dfa.grammars import BINARY, builtin_language
from enc2dfa.rng import py_random
from oracles import all_strings


def test_encode_tokens():
    assert encode_tokens("01", BINARY) == [0, 2, 3, 1]
    assert encode_tokens("", BINARY) == [0, 1]
    assert encode_tokens("aab", Alphabet("ab")) == [0, 2, 2, 3, 1]
    with pytest.raises(ValueError):
        encode_tokens("0" * 10, BINARY, max_len=11)


def test_mod2_dataset():
    dfa = builtin_language("mod2")
    ds = generate_dataset(dfa, DatasetConfig(size=2000, seed=7))
    assert len(ds.items) == 2000
    assert sum(it.label for it in ds.items) == 1000
    assert all(dfa.accepts(it.tokens) == bool(it.label) for it in ds.items)
    assert len({it.tokens for it in ds.items}) == 2000
    lengths = {len(it.tokens) for it in ds.items}
    assert len(lengths) >= 0.8 * 24


def test_accept_all_is_infeasible():
    everything = Dfa(BINARY, 1, 0, {0}, [[0, 0]])
    with pytest.raises(InfeasibleDatasetError):
        generate_dataset(everything, DatasetConfig(size=100))


def test_tomita4_length3():
    dfa = builtin_language("tomita4")
    cfg = DatasetConfig(size=100, min_len=3, max_len=3, seed=1)
    with pytest.raises(InfeasibleDatasetError):
        generate_dataset(dfa, cfg)
    ds = generate_dataset(dfa, DatasetConfig(size=100, min_len=3, max_len=3, seed=1, sparse_policy="repeat"))
    positives = {it.tokens for it in ds.items if it.label}
    assert positives == {s for s in all_strings("01", 3) if len(s) == 3 and s != "000"}
    assert {it.tokens for it in ds.items if not it.label} == {"000"}


def test_count_table_against_enumeration():
    dfa = builtin_language("tomita3")
    table = count_table(dfa, 8)
    for n in range(9):
        strings = [s for s in all_strings("01", n) if len(s) == n]
        pos = sum(dfa.accepts(s) for s in strings)
        assert table[1][n][dfa.initial] == pos
        assert table[0][n][dfa.initial] == len(strings) - pos


def test_cell_sampling_is_uniform():
    # Tomita 4, length 4, label 1: 13 strings without "000"
    dfa = builtin_language("tomita4")
    rows = count_table(dfa, 4)[1]
    k = rows[4][dfa.initial]
    assert k == 13
    rng = py_random(0, "uniformity")
    counts = Counter(_unrank(dfa, rows, 4, rng.randrange(k)) for _ in range(52000))
    assert len(counts) == 13
    assert all(dfa.accepts(s) for s in counts)
    assert chisquare(list(counts.values())).pvalue > 0.001


def test_unrank_is_a_bijection():
    dfa = builtin_language("tomita5")
    for label in (0, 1):
        rows = count_table(dfa, 6)[label]
        k = rows[6][dfa.initial]
        got = [_unrank(dfa, rows, 6, r) for r in range(k)]
        assert len(set(got)) == k
        assert all(dfa.accepts(s) == bool(label) for s in got)


@settings(max_examples=15)
@given(st.sampled_from(["tomita3", "tomita4", "parity", "mod3", "tomita7"]), st.integers(0, 10_000),
       st.integers(20, 300))
def test_generated_datasets_are_balanced_and_correct(name, seed, size):
    dfa = builtin_language(name)
    cfg = DatasetConfig(size=size, max_len=14, seed=seed)
    ds = generate_dataset(dfa, cfg)
    assert abs(ds.positive_fraction() - 0.5) <= cfg.balance_tolerance
    assert all(dfa.accepts(it.tokens) == bool(it.label) for it in ds.items)
    assert len({it.tokens for it in ds.items}) == size
    assert set(ds.split) == {"train", "test"}
    # the split is stratified by label
    for label in (0, 1):
        n_test = sum(1 for it, s in zip(ds.items, ds.split) if it.label == label and s == "test")
        n_all = sum(1 for it in ds.items if it.label == label)
        assert abs(n_test - cfg.test_fraction * n_all) <= 1


def test_same_seed_same_bytes(tmp_path):
    dfa = builtin_language("tomita7")
    cfg = DatasetConfig(size=300, seed=3)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_dataset(generate_dataset(dfa, cfg), a)
    save_dataset(generate_dataset(dfa, cfg), b)
    assert a.read_bytes() == b.read_bytes()
    save_dataset(generate_dataset(dfa, DatasetConfig(size=300, seed=4)), b)
    assert a.read_bytes() != b.read_bytes()


@pytest.fixture
def saved(tmp_path):
    ds = generate_dataset(builtin_language("tomita4"), DatasetConfig(size=200, seed=2))
    path = tmp_path / "ds.jsonl"
    save_dataset(ds, path)
    return ds, path


def test_round_trip(saved):
    ds, path = saved
    assert load_dataset(path) == ds


def test_truncated_file(saved):
    _, path = saved
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(DatasetFormatError):
        load_dataset(path)


def test_dropped_line(saved):
    _, path = saved
    lines = path.read_text().splitlines(keepends=True)
    path.write_text("".join(lines[:-1]))
    with pytest.raises(DatasetFormatError):
        load_dataset(path)


def test_bad_label(saved):
    _, path = saved
    lines = path.read_text().splitlines(keepends=True)
    obj = json.loads(lines[1])
    obj["label"] = 2
    lines[1] = json.dumps(obj) + "\n"
    path.write_text("".join(lines))
    with pytest.raises(DatasetFormatError, match="label"):
        load_dataset(path)


def test_tampered_item(saved):
    _, path = saved
    lines = path.read_text().splitlines(keepends=True)
    obj = json.loads(lines[3])
    obj["label"] = 1 - obj["label"]
    lines[3] = json.dumps(obj) + "\n"
    path.write_text("".join(lines))
    with pytest.raises(DatasetFormatError, match="checksum"):
        load_dataset(path)


@pytest.mark.parametrize("kwargs", [dict(min_len=0), dict(min_len=5, max_len=4), dict(test_fraction=1.0),
                                    dict(size=3), dict(sparse_policy="maybe")])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        DatasetConfig(**kwargs)
