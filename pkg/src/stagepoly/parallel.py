"""Simulated sharded training with shard-local parent discovery and weight averaging.

Pass 1 runs the full staged-expansion loop on every shard independently.
The union of the discovered parents is then frozen, and each later pass
trains every shard from the current global weights and averages the
results at the pass boundary.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidParam, NumericOverflow, UndefinedAUC
from .expansion import ExpansionState
from .features import Example, HashConfig
from .io import ExampleStream
from .learner import LearnerConfig, OnlineLearner, WeightVector


@dataclass
class ShardPlan:
    """Partition of a dataset into shard streams plus the pass structure."""

    shards: list
    passes: int = 5
    base: str = "linear"
    weighting: str = "uniform"
    workers: int = 1

    def __post_init__(self):
        if not self.shards:
            raise InvalidParam("a shard plan needs at least one shard")
        if self.passes < 2:
            raise InvalidParam("passes must be >= 2 (discovery, then averaging)")
        if self.base not in ("linear", "bigram"):
            raise InvalidParam(f"unknown base expansion {self.base!r}")
        if self.weighting not in ("uniform", "examples"):
            raise InvalidParam(f"unknown weighting {self.weighting!r}")

    @property
    def n_shards(self) -> int:
        return len(self.shards)

    def shard_sizes(self) -> list:
        return [len(s) for s in self.shards]

    @classmethod
    def from_examples(cls, examples: Sequence[Example], n_shards: int, **kw) -> "ShardPlan":
        """Round-robin partition: example ``i`` goes to shard ``i % n_shards``."""
        examples = list(examples)
        return cls([examples[k::n_shards] for k in range(n_shards)], **kw)

    @classmethod
    def from_file(cls, path, n_shards: int, task: str = "binary", hash_seed: int = 0,
                  **kw) -> "ShardPlan":
        n = len(ExampleStream(path, task, hash_seed))
        idx = np.arange(n)
        shards = [ExampleStream(path, task, hash_seed, mask=(idx % n_shards) == k)
                  for k in range(n_shards)]
        return cls(shards, **kw)


@dataclass
class Discovery:
    """Outcome of pass 1: each shard's parents and its trained learner."""

    parent_sets: list
    models: list = field(default_factory=list)


def shard_config(cfg: LearnerConfig, base: str) -> LearnerConfig:
    return replace(cfg, passes=1, expand="bigram" if base == "bigram" else None)


def _map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def phase1_discover(plan: ShardPlan, cfg: LearnerConfig) -> Discovery:
    """Run the single-pass expansion loop on every shard."""
    scfg = shard_config(cfg, plan.base)

    def run(stream):
        learner = OnlineLearner(scfg, len(stream))
        learner.fit_pass(stream)
        return learner

    models = _map(run, plan.shards, plan.workers)
    return Discovery([set(m.state.parents) for m in models], models)


def union_and_freeze(parent_sets, cfg: LearnerConfig | None = None) -> ExpansionState:
    parent_sets = list(parent_sets)
    if not parent_sets:
        raise InvalidParam("need at least one parent set")
    cfg = cfg or LearnerConfig()
    state = ExpansionState(HashConfig(cfg.bits, cfg.seed), (), cfg.alpha, cfg.max_degree)
    union = set().union(*parent_sets)
    for p in sorted(union, key=lambda m: (len(m), tuple(m))):
        state.parents.add(p)
        state.registry.mark_parent(p)
    return state.freeze()


def pairwise_sum(arrays: Sequence[np.ndarray]) -> np.ndarray:
    """Sum in fixed index order by recursive halving."""
    n = len(arrays)
    if n == 1:
        return np.array(arrays[0], dtype=np.float64)
    mid = n // 2
    return pairwise_sum(arrays[:mid]) + pairwise_sum(arrays[mid:])


def average_weights(arrays: Sequence[np.ndarray], counts: Sequence[int] | None = None) -> np.ndarray:
    """Uniform (or example-count weighted) average, deterministic in shard order."""
    if counts is None:
        out = pairwise_sum(arrays)
        if len(arrays) > 1:
            out /= len(arrays)
    else:
        total = float(sum(counts))
        if total <= 0:
            raise InvalidParam("example counts must sum to > 0")
        out = pairwise_sum([a * (c / total) for a, c in zip(arrays, counts)])
    if not np.isfinite(out).all():
        raise NumericOverflow("non-finite averaged weights")
    return out


def _adopt(learner: OnlineLearner, state: ExpansionState):
    learner.state = state
    learner._train_plans.clear()
    learner._predict_plans.clear()


def averaged_passes(plan: ShardPlan, frozen: ExpansionState, cfg: LearnerConfig,
                    discovery: Discovery | None = None) -> OnlineLearner:
    """Passes 2..P over the frozen support, averaging shard weights after each pass.

    The starting global weights are the average of the pass-1 shard weights
    when ``discovery`` is given, otherwise zero.
    """
    scfg = shard_config(cfg, plan.base)
    counts = plan.shard_sizes() if plan.weighting == "examples" else None
    if discovery is not None:
        learners = discovery.models
        w = average_weights([m.w.weights for m in learners], counts)
        gs = average_weights([m.w.grad_sq for m in learners], counts)
    else:
        learners = [OnlineLearner(scfg, state=frozen) for _ in plan.shards]
        w = np.zeros(1 << scfg.bits)
        gs = np.zeros(1 << scfg.bits)
    for learner in learners:
        _adopt(learner, frozen)

    def run(args):
        learner, stream = args
        learner.fit_pass(stream)
        return learner

    for _ in range(plan.passes - 1):
        for learner in learners:
            learner.w = WeightVector(scfg.bits, w.copy(), gs.copy())
        _map(run, list(zip(learners, plan.shards)), plan.workers)
        w = average_weights([m.w.weights for m in learners], counts)
        gs = average_weights([m.w.grad_sq for m in learners], counts)

    model = OnlineLearner(scfg, state=frozen)
    model.w = WeightVector(scfg.bits, w, gs)
    return model


def train_parallel(plan: ShardPlan, cfg: LearnerConfig) -> OnlineLearner:
    disc = phase1_discover(plan, cfg)
    frozen = union_and_freeze(disc.parent_sets, cfg)
    return averaged_passes(plan, frozen, cfg, disc)


def sequential_frozen(stream, cfg: LearnerConfig, passes: int, base: str = "linear") -> OnlineLearner:
    """Reference run: one expansion pass, then ``passes - 1`` passes with the support frozen."""
    learner = OnlineLearner(shard_config(cfg, base), len(stream))
    learner.fit_pass(stream)
    learner.freeze()
    for _ in range(passes - 1):
        learner.fit_pass(stream)
    return learner


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels) > 0
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUC("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def planted_interaction_task(n: int, seed: int = 0, vocab: int = 60, active: int = 8,
                             base_rate: float = -3.0):
    """Sparse binary examples with a rare positive class driven by planted pairs.

    Each example switches on ``active`` of ``vocab`` binary features, listed
    in id order.  The positive-class logit has small linear terms plus large
    weights on a few feature pairs.  One pair is adjacent in id order, so
    bigram features see it directly; the others are far apart.
    """
    rng = np.random.default_rng(seed)
    lin = rng.normal(scale=0.3, size=vocab)
    pairs = [(1, 2), (3, 40), (10, 25), (7, 50), (15, 33), (20, 55)]
    pair_w = [2.5, 3.0, 3.0, 2.5, 2.5, 2.5]
    # Popular features make the planted pairs co-occur often enough to learn.
    pop = np.ones(vocab)
    for a, b in pairs:
        pop[a] += 3.0
        pop[b] += 3.0
    pop /= pop.sum()
    # Weighted sampling without replacement via exponential keys (Efraimidis-Spirakis).
    keys = rng.random((n, vocab)) ** (1.0 / pop)
    ids = np.sort(np.argsort(-keys, axis=1, kind="stable")[:, :active], axis=1)
    on = np.zeros((n, vocab), dtype=bool)
    np.put_along_axis(on, ids, True, axis=1)
    logit = base_rate + lin[ids].sum(axis=1)
    for (a, b), wt in zip(pairs, pair_w):
        logit += wt * (on[:, a] & on[:, b])
    y = rng.random(n) < 1.0 / (1.0 + np.exp(-logit))
    ones = (1.0,) * active
    return [Example._trusted(tuple((row + 1).tolist()), ones, float(lab), 1.0)
            for row, lab in zip(ids, y)]
