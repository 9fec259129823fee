"""Support-set state machine for staged polynomial expansion.

The learner grows its feature set at a handful of epoch boundaries.  At
each boundary the top-scoring non-parent monomials are marked as parents,
and from then on every product ``x_i * parent`` is materialized on the fly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidExpansion, InvalidParam
from .features import (
    Example,
    HashConfig,
    Monomial,
    SparseVector,
    hash_monomial,
    monomial_value,
    pair_id,
)

SSM_EPS = 1e-12


class Registry:
    """Exact monomial identities seen during training, with their hash slots.

    Also accumulates the running sums the SSM heuristic needs.  Beyond
    ``capacity`` new monomials are still hashed by the learner but are not
    recorded, so they can never become parents.
    """

    def __init__(self, cfg: HashConfig, capacity: int | None = None):
        self.cfg = cfg
        self.capacity = cfg.size if capacity is None else int(capacity)
        self.index: dict = {}
        self.monomials: list = []
        self._slots = np.zeros(64, dtype=np.int64)
        self._is_parent = np.zeros(64, dtype=bool)
        self.r2m2 = np.zeros(64)
        self.m2 = np.zeros(64)

    def __len__(self):
        return len(self.monomials)

    def __contains__(self, m):
        return m in self.index

    def keys(self):
        return self.index.keys()

    def _grow(self):
        n = 2 * len(self._slots)
        for name in ("_slots", "_is_parent", "r2m2", "m2"):
            old = getattr(self, name)
            new = np.zeros(n, dtype=old.dtype)
            new[:len(old)] = old
            setattr(self, name, new)

    def add(self, m, slot: int | None = None) -> int:
        """Registry id of the sorted tuple ``m``, registering it if there is room; -1 otherwise."""
        rid = self.index.get(m)
        if rid is not None:
            return rid
        n = len(self.monomials)
        if n >= self.capacity:
            return -1
        if n == len(self._slots):
            self._grow()
        m = Monomial._from_sorted(m)
        self.index[m] = n
        self.monomials.append(m)
        self._slots[n] = hash_monomial(m, self.cfg) if slot is None else slot
        return n

    def slot(self, m: Monomial) -> int:
        return int(self._slots[self.index[m]])

    @property
    def slots(self) -> np.ndarray:
        return self._slots[:len(self.monomials)]

    @property
    def is_parent(self) -> np.ndarray:
        return self._is_parent[:len(self.monomials)]

    def mark_parent(self, m: Monomial):
        rid = self.index.get(m)
        if rid is None:
            # Parents must stay selectable identities even past capacity.
            n = len(self.monomials)
            if n == len(self._slots):
                self._grow()
            self.index[m] = rid = n
            self.monomials.append(m)
            self._slots[n] = hash_monomial(m, self.cfg)
        self._is_parent[rid] = True

    def reset_stats(self):
        self.r2m2[:] = 0.0
        self.m2[:] = 0.0


@dataclass
class CandidateScore:
    monomial: Monomial
    score: float
    tiebreak: int


class ExpansionState:
    """Epoch index, parent set, monomial registry and expansion schedule."""

    def __init__(self, cfg: HashConfig | None = None, schedule: Sequence[int] = (),
                 alpha: float = 1.0, max_degree: int = 8,
                 registry_capacity: int | None = None):
        self.cfg = cfg or HashConfig()
        schedule = tuple(int(t) for t in schedule)
        if any(b <= a for a, b in zip(schedule, schedule[1:])):
            raise InvalidParam("schedule must be strictly increasing")
        if alpha <= 0:
            raise InvalidParam("alpha must be > 0")
        self.schedule = schedule
        self.alpha = float(alpha)
        self.max_degree = int(max_degree)
        self.epoch = 1
        self.parents: set = set()
        self.registry = Registry(self.cfg, registry_capacity)
        self.universe: set = set()
        self.frozen = False
        self.examples_seen = 0
        self.nnz_total = 0
        self.epoch_examples = 0

    @property
    def avg_nnz(self) -> float:
        if self.examples_seen == 0:
            return 0.0
        return self.nnz_total / self.examples_seen

    def observe(self, ids):
        """Count one example toward the running mean of base nnz."""
        self.examples_seen += 1
        self.nnz_total += len(ids)
        self.epoch_examples += 1

    def next_threshold(self):
        if self.frozen:
            return None
        k = self.epoch - 1
        return self.schedule[k] if k < len(self.schedule) else None

    def freeze(self):
        self.frozen = True
        return self

    def snapshot_parents(self) -> list:
        return sorted(self.parents, key=lambda m: (len(m), tuple(m)))


def equal_spaced_schedule(n_examples: int, epochs: int = 6, passes: int = 1) -> tuple:
    """Expansion times ``ceil(j * N * passes / epochs)`` for ``j < epochs``."""
    total = n_examples * passes
    taus = []
    for j in range(1, epochs):
        t = -(-j * total // epochs)
        if t >= 1 and (not taus or t > taus[-1]) and t < total:
            taus.append(t)
    return tuple(taus)


def doubling_schedule(first: int, epochs: int = 6) -> tuple:
    return tuple(first * 2 ** k for k in range(epochs - 1))


def compute_budget(avg_nnz: float, alpha: float) -> int:
    if alpha <= 0:
        raise InvalidParam("alpha must be > 0")
    if avg_nnz <= 0:
        return 1
    return max(1, int(math.floor(avg_nnz ** alpha + 0.5)))


def _top_candidates(state: ExpansionState, scores: np.ndarray, eligible: np.ndarray,
                    s_k: int) -> list:
    reg = state.registry
    cand = np.flatnonzero(eligible)
    if len(cand) == 0 or s_k < 1:
        return []
    slots = reg.slots[cand]
    sc = scores[cand]
    order = np.lexsort((slots, -sc))
    take = min(s_k, len(order))
    # Extend over exact (score, slot) ties at the cut so vars decide them.
    while take < len(order) and sc[order[take]] == sc[order[take - 1]] \
            and slots[order[take]] == slots[order[take - 1]]:
        take += 1
    picked = [
        CandidateScore(reg.monomials[cand[o]], float(sc[o]), int(slots[o]))
        for o in order[:take]
    ]
    picked.sort(key=lambda c: (-c.score, c.tiebreak, tuple(c.monomial)))
    return picked[:s_k]


def rank_by_weight(state: ExpansionState, weights, s_k: int) -> list:
    w = getattr(weights, "weights", weights)
    reg = state.registry
    scores = np.abs(np.asarray(w)[reg.slots])
    return _top_candidates(state, scores, ~reg.is_parent, s_k)


def rank_by_ssm(state: ExpansionState, s_k: int, eps: float = SSM_EPS) -> list:
    reg = state.registry
    n = len(reg)
    count = max(state.epoch_examples, 1)
    m2 = reg.m2[:n] / count
    r2m2 = reg.r2m2[:n] / count
    ok = (m2 >= eps) & (m2 > 0) & ~reg.is_parent
    scores = np.zeros(n)
    np.divide(r2m2, m2, out=scores, where=ok)
    return _top_candidates(state, scores, ok, s_k)


def select_parents_weight(state: ExpansionState, weights, s_k: int) -> list:
    """Top ``s_k`` non-parent registry monomials by ``|w|`` at their slot.

    Returned best first.  Ties go to the smaller hash index, then the
    lexicographically smaller variable tuple.
    """
    return [c.monomial for c in rank_by_weight(state, weights, s_k)]


def select_parents_ssm(state: ExpansionState, s_k: int) -> list:
    """Top ``s_k`` non-parents by the ratio of running means E[r^2 m^2] / E[m^2]."""
    return [c.monomial for c in rank_by_ssm(state, s_k)]


def smallest_nonparent(state: ExpansionState):
    """Lowest-degree, then lexicographically smallest, monomial not yet a parent."""
    universe = sorted(state.universe)
    if not universe:
        return None
    parents = state.parents
    by_degree = {}
    for p in parents:
        by_degree[len(p)] = by_degree.get(len(p), 0) + 1
    n = len(universe)
    for deg in range(1, state.max_degree + 1):
        if by_degree.get(deg, 0) >= math.comb(n + deg - 1, deg):
            continue
        for combo in combinations_with_replacement(universe, deg):
            m = Monomial._from_sorted(combo)
            if m not in parents:
                return m
    return None


def apply_fallback(m_k: Sequence[Monomial], state: ExpansionState, s_k: int | None = None) -> list:
    """Reserve one slot of the expansion for the smallest-degree non-parent.

    ``m_k`` is ordered best first.  When it fills the budget ``s_k`` its
    last (lowest-scored) entry is replaced; otherwise the fallback pick is
    appended.
    """
    m_k = list(m_k)
    budget = len(m_k) if s_k is None else s_k
    pick = smallest_nonparent(state)
    if pick is None or pick in m_k:
        return m_k
    if len(m_k) < budget:
        return m_k + [pick]
    if not m_k:
        return m_k
    return m_k[:-1] + [pick]


def expand_support(state: ExpansionState, m_k: Iterable[Monomial]) -> ExpansionState:
    """Mark ``m_k`` as parents and advance the epoch (in place)."""
    m_k = list(m_k)
    overlap = [m for m in m_k if m in state.parents]
    if overlap:
        raise InvalidExpansion(f"already parents: {overlap[:5]}")
    for m in m_k:
        state.parents.add(m)
        state.registry.mark_parent(m)
    state.epoch += 1
    return state


def polynomial_monomials(ids: Sequence[int], degree: int) -> list:
    """All monomials of degree <= ``degree`` over ``ids`` (repetition allowed)."""
    if not 1 <= degree <= 3:
        raise InvalidParam("non-adaptive expansion supports degree 1, 2 or 3")
    order = sorted(ids)
    out = [Monomial._from_sorted((i,)) for i in ids]
    for deg in range(2, degree + 1):
        out.extend(Monomial._from_sorted(c) for c in combinations_with_replacement(order, deg))
    return out


def nonadaptive_expand(ex: Example, degree: int, cfg: HashConfig | None = None) -> SparseVector:
    cfg = cfg or HashConfig()
    value_of = dict(zip(ex.ids, ex.values))
    return SparseVector.from_pairs(
        (hash_monomial(m, cfg), monomial_value(m, value_of))
        for m in polynomial_monomials(ex.ids, degree))


def bigram_expand(ex: Example, seed: int = 0) -> Example:
    """Base features plus one conjunction feature per adjacent pair, in order."""
    src, vals = ex.ids, ex.values
    merged = dict(zip(src, vals))
    for k in range(len(src) - 1):
        i = pair_id(src[k], src[k + 1], seed)
        merged[i] = merged.get(i, 0.0) + vals[k] * vals[k + 1]
    return Example._trusted(tuple(merged), tuple(merged.values()), ex.label, ex.importance)
