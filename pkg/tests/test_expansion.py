import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stagepoly.errors import InvalidExpansion, InvalidParam
from stagepoly.expansion import (
    ExpansionState,
    apply_fallback,
    bigram_expand,
    compute_budget,
    doubling_schedule,
    equal_spaced_schedule,
    expand_support,
    nonadaptive_expand,
    polynomial_monomials,
    rank_by_ssm,
    select_parents_ssm,
    select_parents_weight,
    smallest_nonparent,
)
from stagepoly.features import Example, HashConfig, Monomial, expanded_monomials, hash_monomial

M = Monomial


def _state_with(monos, bits=18):
    s = ExpansionState(HashConfig(bits), registry_capacity=100)
    for m in monos:
        s.registry.add(m)
        s.universe.update(m)
    return s


def _weights_for(state, values, bits=18):
    w = np.zeros(1 << bits)
    for m, v in values.items():
        w[hash_monomial(m, state.cfg)] = v
    return w


@pytest.mark.parametrize("nnz,alpha,want", [(16, 1.0, 16), (16, 0.5, 4), (0, 1.0, 1), (0, 0.3, 1),
                                            (2.25, 0.5, 2), (0.01, 1.0, 1)])
def test_budget(nnz, alpha, want):
    assert compute_budget(nnz, alpha) == want


def test_budget_rejects_nonpositive_alpha():
    with pytest.raises(InvalidParam):
        compute_budget(4, 0)


def test_select_weight_argmax_and_nonparent():
    s = _state_with([M((1,)), M((2,))])
    w = _weights_for(s, {M((1,)): 0.9, M((2,)): -0.1})
    assert select_parents_weight(s, w, 1) == [M((1,))]
    s.parents.add(M((1,)))
    s.registry.mark_parent(M((1,)))
    assert select_parents_weight(s, w, 1) == [M((2,))]


def test_select_weight_returns_all_when_few_and_empty_registry():
    s = _state_with([M((1,)), M((2,))])
    w = _weights_for(s, {M((1,)): 0.3, M((2,)): 0.5})
    assert select_parents_weight(s, w, 10) == [M((2,)), M((1,))]
    assert select_parents_weight(ExpansionState(HashConfig(18)), np.zeros(1 << 18), 3) == []


def test_select_weight_ties_by_slot_then_vars():
    s = _state_with([M((1,)), M((2,)), M((3,))])
    w = np.ones(1 << 18)
    got = select_parents_weight(s, w, 3)
    assert got == sorted(got, key=lambda m: (hash_monomial(m, s.cfg), tuple(m)))
    # Colliding monomials share a slot, so the variable tuple decides.
    tiny = _state_with([M((5,)), M((1,)), M((3,))], bits=1)
    got = select_parents_weight(tiny, np.ones(2), 3)
    by_slot = sorted([M((5,)), M((1,)), M((3,))], key=lambda m: (hash_monomial(m, tiny.cfg), tuple(m)))
    assert got == by_slot


def test_select_ssm_score_and_guard():
    s = _state_with([M((1,)), M((2,)), M((3,))])
    s.epoch_examples = 8
    reg = s.registry
    reg.r2m2[0], reg.m2[0] = 4.0, 2.0
    reg.r2m2[1], reg.m2[1] = 1.0, 2.0
    reg.r2m2[2], reg.m2[2] = 5.0, 0.0
    assert select_parents_ssm(s, 1) == [M((1,))]
    assert select_parents_ssm(s, 5) == [M((1,)), M((2,))]
    assert rank_by_ssm(s, 1)[0].score == pytest.approx(2.0)


def test_fallback_appends_or_replaces():
    s = _state_with([M((1,)), M((2,)), M((3,))])
    for i in (1, 2, 3):
        s.parents.add(M((i,)))
    assert smallest_nonparent(s) == M((1, 1))
    assert apply_fallback([M((1, 3))], s, 2) == [M((1, 3)), M((1, 1))]
    assert apply_fallback([M((1, 3)), M((2, 3))], s, 2) == [M((1, 3)), M((1, 1))]
    assert apply_fallback([M((1, 1))], s, 1) == [M((1, 1))]


def test_fallback_nothing_left():
    s = ExpansionState(HashConfig(18), max_degree=2)
    s.universe = {1, 2}
    s.parents = {M(c) for k in (1, 2) for c in itertools.combinations_with_replacement((1, 2), k)}
    assert smallest_nonparent(s) is None
    assert apply_fallback([], s, 1) == []


def test_expand_support_updates_and_rejects_overlap():
    s = ExpansionState(HashConfig(18))
    expand_support(s, [M((1,))])
    assert s.parents == {M((1,))} and s.epoch == 2
    expand_support(s, [])
    assert s.parents == {M((1,))} and s.epoch == 3
    with pytest.raises(InvalidExpansion):
        expand_support(s, [M((1,))])


def test_nonadaptive_counts():
    ex = Example([(1, 2.0), (4, 3.0), (9, 0.5)])
    assert len(polynomial_monomials(ex.ids, 1)) == 3
    assert len(polynomial_monomials(ex.ids, 2)) == 9
    assert len(polynomial_monomials(ex.ids, 3)) == 19
    big = HashConfig(24)
    assert len(nonadaptive_expand(ex, 3, big)) == 19
    lin = nonadaptive_expand(ex, 1, big).to_dict()
    assert sorted(lin.values()) == [0.5, 2.0, 3.0]
    with pytest.raises(InvalidParam):
        polynomial_monomials(ex.ids, 4)


def test_bigram_counts():
    ex = Example([(5, 1.0), (2, 2.0), (7, 1.0)])
    out = bigram_expand(ex)
    assert out.nnz == 5
    assert dict(zip(out.ids, out.values))[out.ids[3]] == 2.0
    one = bigram_expand(Example([(3, 1.5)]))
    assert one.ids == (3,) and one.values == (1.5,)
    assert bigram_expand(Example([])).nnz == 0


@given(st.integers(1, 30))
def test_bigram_doubles_minus_one(n):
    ex = Example([(i * 7 + 1, 1.0) for i in range(n)])
    assert bigram_expand(ex).nnz == 2 * n - 1


def test_schedules():
    assert equal_spaced_schedule(600, 6) == (100, 200, 300, 400, 500)
    assert equal_spaced_schedule(7, 6, passes=1) == (2, 3, 4, 5, 6)
    assert equal_spaced_schedule(100, 6, passes=2) == (34, 67, 100, 134, 167)
    assert equal_spaced_schedule(100, 1) == ()
    assert doubling_schedule(10, 4) == (10, 20, 40)
    with pytest.raises(InvalidParam):
        ExpansionState(schedule=(5, 5))


def _exhaustive(ids, degree):
    state = ExpansionState(HashConfig(22), max_degree=8)
    support = set(expanded_monomials(ids, state.parents))
    for _ in range(degree - 1):
        for m in support:
            state.registry.add(m)
        nonparents = [m for m in state.registry.monomials if m not in state.parents]
        expand_support(state, select_parents_weight(state, np.zeros(1 << 22), len(nonparents)))
        support = set(expanded_monomials(ids, state.parents))
    return support


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=1, max_size=6, unique=True), st.integers(1, 3))
def test_exhaustive_budget_equals_enumeration(ids, degree):
    assert _exhaustive(ids, degree) == set(polynomial_monomials(ids, degree))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=6, unique=True),
       st.lists(st.lists(st.integers(0, 9), min_size=1, max_size=3), max_size=10), st.integers(1, 8))
def test_selection_never_returns_parents(ids, parents, s_k):
    state = ExpansionState(HashConfig(12))
    for p in parents:
        state.parents.add(M(p))
        state.registry.mark_parent(M(p))
    for m in expanded_monomials(ids, state.parents):
        state.registry.add(m)
    w = np.random.default_rng(len(ids)).normal(size=1 << 12)
    picked = select_parents_weight(state, w, s_k)
    assert not set(picked) & state.parents
    assert len(picked) <= s_k
