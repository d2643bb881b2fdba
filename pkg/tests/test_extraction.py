import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from enc2dfa.automata import Dfa, equivalent, minimize
from enc2dfa.dcsa import classify_batch
from enc2dfa.extraction import (
    AbstractionTeacher, CannotSplit, ExtractionBudget, MembershipOracle, Partition,
    build_abstract_automaton, equivalence_query, extract_dfa_from_dcsa, refine_partition,
)
from enc2dfa.grammars import BINARY, builtin_language
from oracles import all_strings, wire_dfa_into_rnn

SMALL = ExtractionBudget(random_probe_count=300, probe_max_len=16)


def test_budget_validation():
    with pytest.raises(ValueError):
        ExtractionBudget(max_refinements=0)
    with pytest.raises(ValueError):
        ExtractionBudget(wall_clock_seconds=-1)


# --- partition ----------------------------------------------------------------

def test_refine_midpoint_on_widest_gap():
    p = Partition()
    q = refine_partition(p, 0, np.array([0.0, 1.0]), np.array([0.5, -1.0]))
    assert q.n_leaves == 2 and p.n_leaves == 1
    assert q.locate(np.array([0.0, 1.0])) == 0
    assert q.locate(np.array([0.5, -1.0])) == 1
    # threshold 0 on dim 1; the high side takes ">"
    assert q.locate(np.array([9.0, 0.0])) == 1
    assert q.locate(np.array([9.0, 1e-9])) == 0


def test_refine_errors():
    p = Partition()
    v = np.array([1.0, 2.0])
    with pytest.raises(CannotSplit):
        refine_partition(p, 0, v, v.copy())
    q = refine_partition(p, 0, v, -v)
    with pytest.raises(ValueError):
        refine_partition(q, 0, v, -v)  # -v is in leaf 1


@given(st.lists(st.lists(st.floats(-2, 2, allow_nan=False), min_size=3, max_size=3), min_size=2, max_size=12))
def test_refinement_separates_and_grows(points):
    p = Partition()
    vs = [np.array(v) for v in points]
    for a, b in zip(vs, vs[1:]):
        la, lb = p.locate(a), p.locate(b)
        if la != lb:
            continue
        before = p.n_leaves
        try:
            p = refine_partition(p, la, a, b)
        except CannotSplit:
            # only identical (or float-adjacent) vectors cannot be separated
            assert np.abs(a - b).max() < 1e-12
            continue
        assert p.n_leaves == before + 1
        assert p.locate(a) == la and p.locate(b) == before
    assert p.leaves() == list(range(p.n_leaves))


def test_classifier_root_matches_labels():
    dcsa = wire_dfa_into_rnn(builtin_language("tomita4"))
    part = Partition.by_classifier(dcsa)
    oracle = MembershipOracle(dcsa)
    for s in all_strings("01", 6):
        assert part.locate(oracle.state(s)) == int(dcsa.label(s))


# --- oracle and abstraction ---------------------------------------------------

def test_membership_cache_counts():
    dcsa = wire_dfa_into_rnn(builtin_language("mod3"))
    oracle = MembershipOracle(dcsa)
    assert oracle("11") is True and oracle("11") is True and oracle("10") is False
    assert oracle.evaluations == 2 and oracle.cache_hits == 1
    assert oracle.cached_items() == {"11": True, "10": False}
    with pytest.raises(ValueError):
        oracle("2")


@given(st.lists(st.text("01", max_size=8), max_size=20))
def test_cache_is_sound(words):
    dcsa = wire_dfa_into_rnn(builtin_language("tomita3"))
    oracle = MembershipOracle(dcsa)
    for w in words + words[::-1]:
        np.testing.assert_array_equal(oracle.state(w), dcsa.run(w))
        assert oracle(w) == bool(dcsa.label(w))


def test_trivial_partition_gives_one_state_abstraction():
    dcsa = wire_dfa_into_rnn(builtin_language("tomita4"))
    abst = build_abstract_automaton(dcsa, Partition(), SMALL)
    assert abst.states == [0]
    assert abst.transitions == {(0, 0): 0, (0, 1): 0}
    assert abst.accepting[0] is True


def test_abstraction_budget():
    dcsa = wire_dfa_into_rnn(builtin_language("mod5"))
    part = Partition.by_classifier(dcsa)
    abst = build_abstract_automaton(dcsa, part, ExtractionBudget(max_abstract_states=1))
    assert abst.incomplete and len(abst.states) == 1


# --- teacher and end to end ---------------------------------------------------

def _two_state_swapper():
    # reading 1 swaps the states, reading 0 keeps them: odd number of ones
    return Dfa(BINARY, 2, 0, {1}, [[0, 1], [1, 0]])


def test_teacher_accepts_the_right_hypothesis():
    target = _two_state_swapper()
    dcsa = wire_dfa_into_rnn(target)
    cex, part = equivalence_query(target, dcsa, Partition.by_classifier(dcsa), SMALL)
    assert cex is None
    assert part.n_leaves >= 2


def test_teacher_returns_short_cex_for_complement():
    target = _two_state_swapper()
    dcsa = wire_dfa_into_rnn(target)
    cex, _ = equivalence_query(target.complement(), dcsa, Partition.by_classifier(dcsa), SMALL)
    assert cex is not None and len(cex) <= 1
    assert target.complement().accepts(cex) != target.accepts(cex)


def test_teacher_cex_is_genuine():
    target = builtin_language("tomita4")
    dcsa = wire_dfa_into_rnn(target)
    teacher = AbstractionTeacher(dcsa, SMALL)
    wrong = builtin_language("tomita1")
    cex = teacher(wrong)
    assert cex is not None and wrong.accepts(cex) != target.accepts(cex)


@pytest.mark.parametrize("name", ["tomita1", "tomita3", "tomita4", "tomita5", "mod3", "d2", "abab_star"])
def test_extraction_recovers_wired_dfa(name):
    target = builtin_language(name)
    dcsa = wire_dfa_into_rnn(target)
    seen = []
    dfa, xlog = extract_dfa_from_dcsa(dcsa, SMALL, seed=1,
                                      on_conjecture=lambda t: seen.append(t.is_closed() and t.is_consistent()))
    assert equivalent(dfa, target) is None
    assert dfa.n_states == minimize(target).n_states
    assert not xlog.incomplete and all(seen)
    assert xlog.equivalence_rounds == len(xlog.counterexamples) + 1
    assert 0 <= xlog.cache_hits < xlog.membership_queries
    assert xlog.final_leaf_count == 2 + xlog.refinements
    assert xlog.leaf_counts == list(range(2, xlog.final_leaf_count + 1))


def test_leaf_count_strictly_increases():
    dcsa = wire_dfa_into_rnn(builtin_language("tomita3"))
    oracle = MembershipOracle(dcsa)
    teacher = AbstractionTeacher(dcsa, SMALL, oracle=oracle)
    from enc2dfa.lstar import lstar
    lstar(oracle, teacher, BINARY)
    counts = teacher.leaf_counts
    assert len(counts) > 1
    assert all(b == a + 1 for a, b in zip(counts, counts[1:]))


def test_state_budget_gives_incomplete_result():
    dcsa = wire_dfa_into_rnn(builtin_language("mod5"))
    budget = ExtractionBudget(max_hypothesis_states=1, random_probe_count=100, probe_max_len=8)
    dfa, xlog = extract_dfa_from_dcsa(dcsa, budget)
    assert xlog.incomplete and xlog.reason
    assert dfa.n_states >= 1


def test_extraction_is_deterministic():
    dcsa = wire_dfa_into_rnn(builtin_language("tomita5"))
    a, la = extract_dfa_from_dcsa(dcsa, SMALL, seed=3)
    b, lb = extract_dfa_from_dcsa(dcsa, SMALL, seed=3)
    assert a == b
    ja, jb = la.to_json(), lb.to_json()
    ja.pop("wall_seconds"), jb.pop("wall_seconds")
    assert ja == jb


def test_probes_are_labelled_by_the_dcsa():
    dcsa = wire_dfa_into_rnn(builtin_language("mod2"))
    teacher = AbstractionTeacher(dcsa, SMALL, seed=5)
    assert len(teacher.probes) == len(set(teacher.probes))
    assert max(map(len, teacher.probes)) <= SMALL.probe_max_len
    np.testing.assert_array_equal(teacher.probe_labels, classify_batch(dcsa, teacher.probes).astype(bool))
