"""Streaming squared-loss SGD over an adaptively expanded feature set."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyData, InvalidParam, NumericOverflow
from .expansion import (
    ExpansionState,
    apply_fallback,
    bigram_expand,
    compute_budget,
    doubling_schedule,
    equal_spaced_schedule,
    expand_support,
    polynomial_monomials,
    select_parents_ssm,
    select_parents_weight,
)
from .features import (
    Example,
    FeaturePlan,
    HashConfig,
    SparseVector,
    constant_slot,
    expanded_tuples,
    hash_monomial,
)

LR_GRID = (0.05, 0.1, 0.25, 0.5, 1.0)
STEP_MODES = ("theorem", "fixed", "adaptive")
EXPAND_MODES = (None, "quad", "cubic", "bigram")
_PLAN_CACHE_LIMIT = 1 << 15


class WeightVector:
    """Dense hashed parameter table plus per-slot squared-gradient sums."""

    def __init__(self, bits: int, weights=None, grad_sq=None):
        size = 1 << bits
        self.bits = bits
        self.weights = np.zeros(size) if weights is None else np.asarray(weights, dtype=np.float64)
        self.grad_sq = np.zeros(size) if grad_sq is None else np.asarray(grad_sq, dtype=np.float64)
        if len(self.weights) != size or len(self.grad_sq) != size:
            raise InvalidParam("weight array size must be 2**bits")

    def dot(self, feats: SparseVector) -> float:
        return float(self.weights[feats.indices] @ feats.values)

    def copy(self) -> "WeightVector":
        return WeightVector(self.bits, self.weights.copy(), self.grad_sq.copy())


@dataclass
class LearnerConfig:
    loss: str = "squared"
    task: str = "binary"
    l2: float = 0.0
    step_mode: str = "adaptive"
    learning_rate: float = 0.5
    epochs: int = 6
    alpha: float = 1.0
    heuristic: str = "weight"
    fallback: bool = False
    passes: int = 1
    bits: int = 18
    seed: int = 0
    max_degree: int = 8
    stage_poly: bool = True
    expand: str | None = None
    bias: bool = True
    budget: int | None = None
    registry_capacity: int | None = None
    schedule: str = "equal"
    first_expansion: int = 1000
    n_examples: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.loss != "squared":
            raise InvalidParam("only squared loss is supported")
        if self.task not in ("binary", "regression"):
            raise InvalidParam(f"unknown task {self.task!r}")
        if self.step_mode not in STEP_MODES:
            raise InvalidParam(f"unknown step mode {self.step_mode!r}")
        if self.step_mode == "theorem" and not self.l2 > 0:
            raise InvalidParam("step_mode='theorem' requires l2 > 0")
        if self.l2 < 0:
            raise InvalidParam("l2 must be >= 0")
        if not self.learning_rate > 0:
            raise InvalidParam("learning_rate must be > 0")
        if self.epochs < 1 or self.passes < 1:
            raise InvalidParam("epochs and passes must be >= 1")
        if self.alpha <= 0:
            raise InvalidParam("alpha must be > 0")
        if self.heuristic not in ("weight", "ssm"):
            raise InvalidParam(f"unknown heuristic {self.heuristic!r}")
        if self.expand not in EXPAND_MODES:
            raise InvalidParam(f"unknown expansion {self.expand!r}")
        if self.stage_poly and self.expand in ("quad", "cubic"):
            raise InvalidParam("stage_poly composes only with expand='bigram'")
        if self.schedule not in ("equal", "doubling"):
            raise InvalidParam(f"unknown schedule {self.schedule!r}")
        if self.budget is not None and self.budget < 1:
            raise InvalidParam("budget must be >= 1")
        HashConfig(self.bits, self.seed)

    @property
    def poly_degree(self) -> int:
        return {"quad": 2, "cubic": 3}.get(self.expand, 0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    model: "OnlineLearner"
    progressive_error: float
    wall_time: float
    examples_seen: int
    features_per_example: float
    progressive_squared: float = 0.0
    epoch_errors: list = field(default_factory=list)
    avg_base_nnz: float = 0.0

    @property
    def final_epoch_error(self) -> float:
        return self.epoch_errors[-1] if self.epoch_errors else self.progressive_error


def gradient(w: WeightVector, feats: SparseVector, y: float, l2: float = 0.0,
             importance: float = 1.0) -> SparseVector:
    """Squared-loss gradient ``(yhat - y) * x + l2 * w`` on the support of ``feats``."""
    wi = w.weights[feats.indices]
    yhat = float(wi @ feats.values)
    if not math.isfinite(yhat):
        raise NumericOverflow("non-finite prediction")
    g = (importance * (yhat - y)) * feats.values
    if l2:
        g = g + l2 * wi
    return SparseVector(feats.indices, g)


def step_size(mode: str, t: int, learning_rate: float = 0.5, l2: float = 0.0) -> float:
    """Global step size at step ``t`` (1-based)."""
    if mode == "theorem":
        return 1.0 / (l2 * (t + 1))
    if mode == "fixed":
        return learning_rate / math.sqrt(t)
    return learning_rate


def sgd_step(w: WeightVector, g: SparseVector, eta: float, adaptive: bool = False) -> WeightVector:
    """In-place ``w[i] -= eta * g[i]`` over the support of ``g``.

    With ``adaptive`` the step of each slot is further divided by the root
    of its accumulated squared gradients.
    """
    if not eta > 0:
        raise InvalidParam("eta must be > 0")
    if len(g) == 0:
        return w
    idx, gv = g.indices, g.values
    if adaptive:
        gs = w.grad_sq[idx] + gv * gv
        w.grad_sq[idx] = gs
        denom = np.sqrt(gs)
        denom[denom == 0] = 1.0
        new = w.weights[idx] - eta * gv / denom
    else:
        new = w.weights[idx] - eta * gv
    if not np.isfinite(new).all():
        raise NumericOverflow("non-finite weight after update")
    w.weights[idx] = new
    return w


def normalize_label(y: float, task: str) -> float:
    if task == "binary":
        if y == -1:
            return 0.0
        if y not in (0.0, 1.0):
            raise InvalidParam(f"binary labels must be -1/+1 or 0/1, got {y}")
    return float(y)


class DirectPlan:
    """Expansion of a single example, with the FeaturePlan interface."""

    __slots__ = ("slots", "tv", "inverse", "n_terms", "track_terms", "track_ids")

    def __init__(self, slots, term_vals, track_terms, track_ids):
        self.n_terms = len(slots)
        self.tv = np.array(term_vals)
        if len(set(slots)) == len(slots):
            self.slots = np.array(slots, dtype=np.int64)
            self.inverse = None
        else:
            self.slots, self.inverse = np.unique(np.array(slots, dtype=np.int64),
                                                 return_inverse=True)
        self.track_terms = track_terms
        self.track_ids = track_ids

    def term_values(self, x_ext=None):
        return self.tv

    def slot_values(self, term_vals):
        if self.inverse is None:
            return term_vals
        return np.bincount(self.inverse, weights=term_vals, minlength=len(self.slots))

    def values(self, x_ext=None):
        return self.slot_values(self.tv)


class OnlineLearner:
    """One model: hashed weights plus the expansion state that shapes its features."""

    def __init__(self, cfg: LearnerConfig | None = None, n_examples: int | None = None,
                 state: ExpansionState | None = None):
        self.cfg = cfg or LearnerConfig()
        self.hash = HashConfig(self.cfg.bits, self.cfg.seed)
        self.w = WeightVector(self.cfg.bits)
        if state is None:
            state = ExpansionState(self.hash, self._schedule(n_examples), self.cfg.alpha,
                                   self.cfg.max_degree, self.cfg.registry_capacity)
        self.state = state
        self.t = 0
        self.const_slot = constant_slot(self.hash)
        self._train_plans: dict = {}
        self._predict_plans: dict = {}
        self._slot_of: dict = {}
        self._epoch_loss = [0.0]
        self._epoch_count = [0]
        self._sq_sum = 0.0
        self._err_sum = 0.0
        self._feat_sum = 0
        self._nnz_sum = 0
        self.expansion_log: list = []

    def _schedule(self, n_examples):
        cfg = self.cfg
        if not cfg.stage_poly or cfg.epochs == 1:
            return ()
        if cfg.schedule == "doubling":
            return doubling_schedule(cfg.first_expansion, cfg.epochs)
        n = n_examples if n_examples is not None else cfg.n_examples
        if n is None:
            raise InvalidParam("the equal-spaced schedule needs the example count")
        return equal_spaced_schedule(n, cfg.epochs, cfg.passes)

    @property
    def tracking(self) -> bool:
        return self.cfg.stage_poly and not self.state.frozen

    def base_example(self, ex: Example) -> Example:
        if self.cfg.expand == "bigram":
            return bigram_expand(ex, self.cfg.seed)
        return ex

    def _monomials(self, ids):
        cfg = self.cfg
        if cfg.poly_degree:
            return polynomial_monomials(ids, cfg.poly_degree)
        if cfg.stage_poly:
            return expanded_tuples(ids, self.state.parents, self.state.max_degree)
        return expanded_tuples(ids, (), 1)

    def _layout(self, ids, train: bool):
        """Monomials of ``ids`` with their slots and registry ids."""
        monos = self._monomials(ids)
        slot_of = self._slot_of
        hcfg = self.hash
        slots = []
        track_terms, track_ids = [], []
        add = None
        if train and self.tracking:
            self.state.universe.update(ids)
            add = self.state.registry.add
        for k, m in enumerate(monos):
            s = slot_of.get(m)
            if s is None:
                s = slot_of[m] = hash_monomial(m, hcfg)
            slots.append(s)
            if add is not None:
                rid = add(m, s)
                if rid >= 0:
                    track_terms.append(k)
                    track_ids.append(rid)
        return monos, slots, track_terms, track_ids

    def _build_plan(self, ids, layout) -> FeaturePlan:
        monos, slots, track_terms, track_ids = layout
        slots = list(slots)
        pos_of = {i: k for k, i in enumerate(ids)}
        terms = [tuple(pos_of[v] for v in m) for m in monos]
        if self.cfg.bias:
            terms.append(())
            slots.append(self.const_slot)
        return FeaturePlan(len(ids), terms, slots, track_terms, track_ids)

    def _direct(self, ex: Example, layout) -> DirectPlan:
        """One-off expansion computed in Python, for support patterns seen once."""
        monos, slots, track_terms, track_ids = layout
        slots = list(slots)
        vals = ex.values
        if vals.count(1.0) == len(vals):
            # Binary features: every product is 1.
            tv = [1.0] * len(monos)
        else:
            value_of = dict(zip(ex.ids, vals))
            tv = []
            for m in monos:
                v = 1.0
                for i in m:
                    v *= value_of[i]
                tv.append(v)
        if self.cfg.bias:
            slots.append(self.const_slot)
            tv.append(1.0)
        return DirectPlan(slots, tv, track_terms, track_ids)

    def plan(self, ex: Example, train: bool = False):
        """Expansion layout for ``ex``: a cached FeaturePlan or a DirectPlan.

        A support pattern gets a reusable numpy plan the second time it is
        seen; the first sighting is expanded directly and only its layout
        is kept.
        """
        cache = self._train_plans if train else self._predict_plans
        key = ex.ids
        p = cache.get(key)
        if p is None:
            if len(cache) >= _PLAN_CACHE_LIMIT:
                cache.clear()
            layout = cache[key] = self._layout(key, train)
            return self._direct(ex, layout)
        if type(p) is tuple:
            p = cache[key] = self._build_plan(key, p)
        return p

    def features(self, ex: Example) -> SparseVector:
        """Hashed feature vector of ``ex`` under the current support."""
        ex = self.base_example(ex)
        p = self.plan(ex)
        return SparseVector(p.slots, p.values(np.array(ex.values + (1.0,))))

    def predict_one(self, ex: Example) -> float:
        ex = self.base_example(ex)
        p = self.plan(ex)
        yhat = float(self.w.weights[p.slots] @ p.values(np.array(ex.values + (1.0,))))
        if not math.isfinite(yhat):
            raise NumericOverflow("non-finite prediction")
        return yhat

    def predict(self, examples: Iterable[Example]) -> np.ndarray:
        return np.array([self.predict_one(ex) for ex in examples])

    def learn_one(self, ex: Example, index: int | None = None) -> float:
        """Predict, record progressive loss, update; returns the pre-update prediction."""
        cfg = self.cfg
        y = normalize_label(ex.label, cfg.task)
        ex = self.base_example(ex)
        p = self.plan(ex, train=True)
        x_ext = np.array(ex.values + (1.0,))
        tv = p.term_values(x_ext)
        v = p.slot_values(tv)
        idx = p.slots
        wv = self.w.weights
        wi = wv[idx]
        yhat = float(wi @ v)
        if not math.isfinite(yhat):
            raise NumericOverflow(f"non-finite prediction at example {index}", index)
        r = yhat - y
        self.t += 1
        g = (r * ex.importance) * v
        if cfg.l2:
            g += cfg.l2 * wi
        if cfg.step_mode == "adaptive":
            gs = self.w.grad_sq[idx] + g * g
            self.w.grad_sq[idx] = gs
            denom = np.sqrt(gs)
            denom[denom == 0] = 1.0
            new = wi - cfg.learning_rate * g / denom
        else:
            new = wi - step_size(cfg.step_mode, self.t, cfg.learning_rate, cfg.l2) * g
        if not np.isfinite(new).all():
            raise NumericOverflow(f"non-finite weight at example {index}", index)
        wv[idx] = new

        if cfg.heuristic == "ssm" and len(p.track_ids):
            reg = self.state.registry
            m2 = tv[p.track_terms] ** 2
            reg.r2m2[p.track_ids] += (r * r) * m2
            reg.m2[p.track_ids] += m2

        if cfg.task == "binary":
            loss = float((yhat >= 0.5) != (y >= 0.5))
        else:
            loss = r * r
        self._err_sum += loss
        self._sq_sum += r * r
        self._epoch_loss[-1] += loss
        self._epoch_count[-1] += 1
        self._feat_sum += p.n_terms - (1 if cfg.bias else 0)
        self._nnz_sum += len(ex.ids)

        if self.tracking:
            self.state.observe(ex.ids)
            if self.t == self.state.next_threshold():
                self.expand()
        return yhat

    def expand(self):
        """Run one support expansion with the configured heuristic."""
        cfg, state = self.cfg, self.state
        s_k = cfg.budget or compute_budget(state.avg_nnz, cfg.alpha)
        if cfg.heuristic == "ssm":
            m_k = select_parents_ssm(state, s_k)
        else:
            m_k = select_parents_weight(state, self.w, s_k)
        if cfg.fallback:
            m_k = apply_fallback(m_k, state, s_k)
        expand_support(state, m_k)
        self.expansion_log.append((self.t, list(m_k)))
        state.registry.reset_stats()
        state.epoch_examples = 0
        self._train_plans.clear()
        self._predict_plans.clear()
        self._epoch_loss.append(0.0)
        self._epoch_count.append(0)

    def freeze(self):
        """Stop expanding; the parent set stays fixed from here on."""
        self.state.freeze()
        self._train_plans.clear()
        self._predict_plans.clear()
        return self

    def fit_pass(self, stream: Iterable[Example]):
        for i, ex in enumerate(stream):
            self.learn_one(ex, i)
        return self

    def report(self, wall_time: float = 0.0) -> TrainReport:
        n = self.t
        epoch_errors = [s / c for s, c in zip(self._epoch_loss, self._epoch_count) if c]
        return TrainReport(
            model=self,
            progressive_error=self._err_sum / n if n else 0.0,
            wall_time=wall_time,
            examples_seen=n,
            features_per_example=self._feat_sum / n if n else 0.0,
            progressive_squared=self._sq_sum / n if n else 0.0,
            epoch_errors=epoch_errors,
            avg_base_nnz=self._nnz_sum / n if n else 0.0,
        )


def _example_count(stream):
    try:
        return len(stream)
    except TypeError:
        return None


def train(stream: Iterable[Example], cfg: LearnerConfig | None = None) -> TrainReport:
    """Run the full staged-expansion SGD loop over ``cfg.passes`` passes of ``stream``."""
    cfg = cfg or LearnerConfig()
    start = time.perf_counter()
    n = cfg.n_examples if cfg.n_examples is not None else _example_count(stream)
    if n is None and cfg.schedule == "equal" and cfg.stage_poly and cfg.epochs > 1:
        stream = list(stream)
        n = len(stream)
    if n == 0:
        raise EmptyData("training stream is empty")
    learner = OnlineLearner(cfg, n)
    for _ in range(cfg.passes):
        learner.fit_pass(stream)
    if learner.t == 0:
        raise EmptyData("training stream is empty")
    return learner.report(time.perf_counter() - start)


def evaluate(model: OnlineLearner, testset: Iterable[Example], task: str | None = None) -> float:
    """Mean 0-1 error (binary) or mean squared error (regression)."""
    task = task or model.cfg.task
    total, n = 0.0, 0
    for ex in testset:
        y = normalize_label(ex.label, task)
        yhat = model.predict_one(ex)
        if task == "binary":
            total += float((yhat >= 0.5) != (y >= 0.5))
        else:
            total += (yhat - y) ** 2
        n += 1
    if n == 0:
        raise EmptyData("test set is empty")
    return total / n


def tune_learning_rate(stream, cfg: LearnerConfig, grid: Sequence[float] = LR_GRID):
    """Pick the learning rate with the lowest progressive error.

    Returns ``(best_rate, {rate: progressive_error})``.  Rates that diverge
    are recorded as ``inf``.
    """
    scores = {}
    for lr in grid:
        try:
            rep = train(stream, replace(cfg, learning_rate=lr))
            scores[lr] = rep.progressive_error
        except NumericOverflow:
            scores[lr] = math.inf
    best = min(grid, key=lambda lr: (scores[lr], lr))
    return best, scores
