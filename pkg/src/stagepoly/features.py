"""Monomials, hashing and on-the-fly recursive expansion of examples.

A monomial is a multiset of base-variable ids stored as a sorted tuple, so
``x1 * x1 * x3`` is ``Monomial((1, 1, 3))``.  Weights live in a hashed
table of ``2**bits`` slots; colliding monomials share a slot.
"""

from __future__ import annotations

import bisect
import hashlib
import math
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidMonomial, InvalidParam

MASK64 = (1 << 64) - 1
MAX_BASE_ID = (1 << 31) - 1

# Salts keep the monomial-index space and the base-id space decoupled.
MONOMIAL_SALT = 0x5EED_0F_A11_0
TOKEN_SALT = 0x70CE_11_5A17
BIGRAM_SALT = 0xB16_4A11
CONSTANT_SALT = 0xC0_257A_17


def mix64(z: int) -> int:
    """splitmix64 finalizer; a bijection on 64-bit integers."""
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class Monomial(tuple):
    """Canonical (sorted) multiset of base-variable ids."""

    __slots__ = ()

    def __new__(cls, ids: Iterable[int] = ()):
        ids = sorted(ids)
        if not ids:
            raise InvalidMonomial("a monomial needs at least one variable")
        for i in ids:
            if not isinstance(i, (int, np.integer)) or i < 0:
                raise InvalidMonomial(f"variable ids must be integers >= 0, got {i!r}")
        return tuple.__new__(cls, (int(i) for i in ids))

    @classmethod
    def _from_sorted(cls, ids):
        return tuple.__new__(cls, ids)

    @property
    def vars(self) -> tuple:
        return tuple(self)

    @property
    def degree(self) -> int:
        return len(self)

    def times(self, i: int) -> "Monomial":
        """Product with the base variable ``x_i``."""
        pos = bisect.bisect_right(self, i)
        return tuple.__new__(Monomial, self[:pos] + (i,) + self[pos:])

    def __repr__(self):
        return f"Monomial({tuple(self)!r})"

    def __str__(self):
        parts = []
        for v in sorted(set(self)):
            c = self.count(v)
            parts.append(f"x{v}" if c == 1 else f"x{v}^{c}")
        return "*".join(parts)


def canonicalize(ids: Sequence[int]) -> Monomial:
    return Monomial(ids)


@dataclass(frozen=True)
class HashConfig:
    bits: int = 18
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.bits <= 31:
            raise InvalidParam(f"bits must be in [1, 31], got {self.bits}")

    @property
    def size(self) -> int:
        return 1 << self.bits

    @property
    def mask(self) -> int:
        return (1 << self.bits) - 1


@lru_cache(maxsize=1 << 20)
def _hash_vars(vars: tuple, seed: int) -> int:
    h = mix64((seed ^ MONOMIAL_SALT) & MASK64)
    for v in vars:
        h = mix64(h ^ (v + 1))
    return h


def hash_monomial(m: Monomial, cfg: HashConfig) -> int:
    return _hash_vars(tuple(m), cfg.seed) & cfg.mask


def constant_slot(cfg: HashConfig) -> int:
    """Weight slot of the always-on constant (intercept) feature."""
    return mix64((cfg.seed ^ CONSTANT_SALT) & MASK64) & cfg.mask


@lru_cache(maxsize=1 << 16)
def hash_token(token: str, seed: int = 0) -> int:
    """Map a string token to a base-variable id in [0, 2**31)."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    h = int.from_bytes(digest, "little")
    return mix64(h ^ ((seed ^ TOKEN_SALT) & MASK64)) & MAX_BASE_ID


@lru_cache(maxsize=1 << 18)
def pair_id(a: int, b: int, seed: int = 0) -> int:
    """Base-variable id of the ordered conjunction of ids ``a`` then ``b``."""
    h = mix64((seed ^ BIGRAM_SALT) & MASK64)
    h = mix64(h ^ (a + 1))
    h = mix64(h ^ (b + 1))
    return h & MAX_BASE_ID


class Example:
    """Sparse base-feature vector with a label.

    ``ids`` keep input order (token order matters for bigrams).
    """

    __slots__ = ("ids", "values", "label", "importance")

    def __init__(self, features=(), label=0.0, importance=1.0, *, ids=None, values=None):
        if ids is None:
            features = list(features)
            ids = tuple(int(i) for i, _ in features)
            values = tuple(float(v) for _, v in features)
        else:
            ids = tuple(int(i) for i in ids)
            values = tuple(float(v) for v in values)
        if len(ids) != len(values):
            raise ValueError("ids and values differ in length")
        if len(set(ids)) != len(ids):
            raise ValueError("feature ids must be unique within an example")
        if any(i < 0 for i in ids):
            raise ValueError("feature ids must be >= 0")
        if not all(math.isfinite(v) for v in values):
            raise ValueError("feature values must be finite")
        if not importance > 0:
            raise ValueError("importance must be > 0")
        self.ids = ids
        self.values = values
        self.label = float(label)
        self.importance = float(importance)

    @classmethod
    def _trusted(cls, ids: tuple, values: tuple, label: float, importance: float) -> "Example":
        """Construct without validation; inputs must already satisfy the invariants."""
        ex = object.__new__(cls)
        ex.ids, ex.values, ex.label, ex.importance = ids, values, label, importance
        return ex

    @property
    def features(self):
        return tuple(zip(self.ids, self.values))

    @property
    def nnz(self) -> int:
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, Example):
            return NotImplemented
        return (self.ids, self.values, self.label, self.importance) == (
            other.ids, other.values, other.label, other.importance)

    def __hash__(self):
        return hash((self.ids, self.values, self.label, self.importance))

    def __repr__(self):
        return f"Example({list(self.features)!r}, label={self.label!r})"


class SparseVector:
    """Hashed feature vector with unique slot indices."""

    __slots__ = ("indices", "values")

    def __init__(self, indices, values):
        self.indices = np.asarray(indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)

    @classmethod
    def from_pairs(cls, pairs) -> "SparseVector":
        acc = {}
        for i, v in pairs:
            acc[i] = acc.get(i, 0.0) + v
        idx = sorted(acc)
        return cls(idx, [acc[i] for i in idx])

    def to_dict(self) -> dict:
        return dict(zip(self.indices.tolist(), self.values.tolist()))

    def __len__(self):
        return len(self.indices)


def expanded_monomials(ids: Sequence[int], parents, max_degree: int = 8) -> list:
    """Every monomial of the current feature set supported on ``ids``.

    Base monomials come first, followed by children ``x_i * p`` of each
    reachable parent ``p`` in breadth-first order.  Each identity appears
    once even when reachable through several parents.
    """
    wrap = Monomial._from_sorted
    return [wrap(t) for t in expanded_tuples(ids, parents, max_degree)]


def expanded_tuples(ids: Sequence[int], parents, max_degree: int = 8) -> list:
    """``expanded_monomials`` as plain sorted tuples (they hash and compare equal)."""
    out = [(i,) for i in ids]
    if not parents:
        return out
    seen = set(out)
    queue = deque(m for m in out if m in parents)
    split = bisect.bisect_right
    append, mark = out.append, seen.add
    while queue:
        p = queue.popleft()
        if len(p) >= max_degree:
            continue
        for i in ids:
            k = split(p, i)
            c = p[:k] + (i,) + p[k:]
            if c in seen:
                continue
            mark(c)
            append(c)
            if c in parents:
                queue.append(c)
    return out


def monomial_value(m: Monomial, value_of: dict) -> float:
    v = 1.0
    for i in m:
        v *= value_of[i]
    return v


def expand_example(ex: Example, state, cfg: HashConfig) -> SparseVector:
    """Hashed feature vector of ``ex`` over the support set of ``state``."""
    value_of = dict(zip(ex.ids, ex.values))
    monos = expanded_monomials(ex.ids, state.parents, getattr(state, "max_degree", 8))
    return SparseVector.from_pairs(
        (hash_monomial(m, cfg), monomial_value(m, value_of)) for m in monos)


class FeaturePlan:
    """Precomputed layout for expanding examples with a fixed id sequence.

    Each term is a monomial (or the constant) given as positions into the
    example's value vector.  ``values(x)`` returns the per-slot feature
    values aligned with ``slots``.
    """

    __slots__ = ("slots", "pos", "max_deg", "inverse", "n_terms",
                 "track_terms", "track_ids", "degrees")

    def __init__(self, n_inputs, terms, term_slots, track_terms=(), track_ids=()):
        n_terms = len(terms)
        max_deg = max((len(t) for t in terms), default=1)
        max_deg = max(max_deg, 1)
        pad = n_inputs
        pos = np.full((n_terms, max_deg), pad, dtype=np.intp)
        for r, t in enumerate(terms):
            pos[r, :len(t)] = t
        self.degrees = np.fromiter((len(t) for t in terms), dtype=np.intp, count=n_terms)
        term_slots = np.asarray(term_slots, dtype=np.int64)
        uniq, inverse = np.unique(term_slots, return_inverse=True)
        if len(uniq) == n_terms:
            self.inverse = None
            self.slots = term_slots
        else:
            self.inverse = inverse
            self.slots = uniq
        self.pos = pos[:, 0] if max_deg == 1 else pos
        self.max_deg = max_deg
        self.n_terms = n_terms
        self.track_terms = np.asarray(track_terms, dtype=np.intp)
        self.track_ids = np.asarray(track_ids, dtype=np.intp)

    def term_values(self, x_ext: np.ndarray) -> np.ndarray:
        """Per-term values; ``x_ext`` is the example's values with a trailing 1."""
        if self.max_deg == 1:
            return x_ext[self.pos]
        return x_ext[self.pos].prod(axis=1)

    def slot_values(self, term_vals: np.ndarray) -> np.ndarray:
        if self.inverse is None:
            return term_vals
        return np.bincount(self.inverse, weights=term_vals, minlength=len(self.slots))

    def values(self, x_ext: np.ndarray) -> np.ndarray:
        return self.slot_values(self.term_values(x_ext))
