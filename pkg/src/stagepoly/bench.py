"""Benchmark harness: baselines vs staged expansion, relative error/time, CDF output.

Records CSV columns (one row per dataset and method)::

    dataset, method, alpha, learning_rate, test_error, progressive_error,
    train_seconds, rel_err, rel_time, avg_features_per_example,
    n_train, n_test, status, message

``rel_err`` is empty when the three baselines are missing or tie.
CDF CSV columns: ``metric`` (rel_err | rel_time), ``method``, ``x``,
``count``; a row ``(x, count)`` means ``count`` datasets have a value of
at most ``x``.
"""

from __future__ import annotations

import csv
import math
import re
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

from .errors import DegenerateBaselines, InvalidParam, InvalidTiming, StagePolyError
from .io import DatasetManifest, split_dataset
from .learner import LR_GRID, LearnerConfig, evaluate, train, tune_learning_rate

ALPHA_GRID = (0.125, 0.25, 0.5, 0.75, 1.0)
BASELINES = ("lin", "quad", "cubic")
RECORD_COLUMNS = (
    "dataset", "method", "alpha", "learning_rate", "test_error", "progressive_error",
    "train_seconds", "rel_err", "rel_time", "avg_features_per_example",
    "n_train", "n_test", "status", "message",
)
CDF_COLUMNS = ("metric", "method", "x", "count")


def relative_error(err: float, l: float, q: float, c: float) -> float:
    lo, hi = min(l, q, c), max(l, q, c)
    if hi == lo:
        raise DegenerateBaselines("baseline errors are all equal")
    return (err - lo) / (hi - lo)


def relative_time(t: float, t_lin: float) -> float:
    if not t_lin > 0:
        raise InvalidTiming("linear baseline time must be > 0")
    return t / t_lin


def cdf(values) -> list:
    values = sorted(values)
    if not values:
        raise InvalidParam("cdf of an empty sequence")
    out = []
    for k, v in enumerate(values, 1):
        if out and out[-1][0] == v:
            out[-1] = (v, k)
        else:
            out.append((v, k))
    return out


@dataclass
class BenchConfig:
    lr_grid: tuple = LR_GRID
    alphas: tuple = ALPHA_GRID
    split_fraction: float = 0.8
    split_seed: int = 0
    repeats: int = 3
    bits: int = 18
    cubic_bits: int = 24
    seed: int = 0
    epochs: int = 6
    workers: int = 1


@dataclass
class MethodResult:
    method: str
    alpha: float | None
    learning_rate: float
    test_error: float
    progressive_error: float
    train_seconds: float
    avg_features_per_example: float
    n_train: int
    n_test: int


@dataclass
class BenchRecord:
    dataset: str
    results: dict = field(default_factory=dict)
    status: str = "ok"
    message: str = ""

    def baselines(self):
        if not all(b in self.results for b in BASELINES):
            return None
        return tuple(self.results[b].test_error for b in BASELINES)

    def rel_err(self, method: str):
        base = self.baselines()
        if base is None:
            return None
        try:
            return relative_error(self.results[method].test_error, *base)
        except DegenerateBaselines:
            return None

    def rel_time(self, method: str):
        if "lin" not in self.results:
            return None
        try:
            return relative_time(self.results[method].train_seconds,
                                 self.results["lin"].train_seconds)
        except InvalidTiming:
            return None

    def rows(self) -> list:
        if self.status != "ok":
            return [dict({c: "" for c in RECORD_COLUMNS}, dataset=self.dataset,
                         status=self.status, message=self.message)]
        out = []
        for name, r in self.results.items():
            re_, rt = self.rel_err(name), self.rel_time(name)
            out.append({
                "dataset": self.dataset, "method": name,
                "alpha": "" if r.alpha is None else r.alpha,
                "learning_rate": r.learning_rate, "test_error": r.test_error,
                "progressive_error": r.progressive_error, "train_seconds": r.train_seconds,
                "rel_err": "" if re_ is None else re_, "rel_time": "" if rt is None else rt,
                "avg_features_per_example": r.avg_features_per_example,
                "n_train": r.n_train, "n_test": r.n_test, "status": "ok", "message": "",
            })
        return out


_METHOD = re.compile(r"^(lin|quad|cubic|bigram|apple|ssm|apple-best)(?:\(([0-9.]+)\))?$")


def parse_method(name: str):
    m = _METHOD.match(name)
    if not m:
        raise InvalidParam(f"unknown method {name!r}")
    kind, alpha = m.group(1), m.group(2)
    if alpha is not None and kind not in ("apple", "ssm"):
        raise InvalidParam(f"method {kind!r} takes no exponent")
    if kind in ("apple", "ssm"):
        alpha = 1.0 if alpha is None else float(alpha)
        if alpha <= 0:
            raise InvalidParam("exponent must be > 0")
    return kind, alpha


def method_config(name: str, task: str, config: BenchConfig) -> LearnerConfig:
    kind, alpha = parse_method(name)
    base = dict(task=task, bits=config.bits, seed=config.seed, epochs=config.epochs)
    if kind == "lin":
        return LearnerConfig(stage_poly=False, **base)
    if kind == "quad":
        return LearnerConfig(stage_poly=False, expand="quad", **base)
    if kind == "cubic":
        return LearnerConfig(stage_poly=False, expand="cubic", **dict(base, bits=config.cubic_bits))
    if kind == "bigram":
        return LearnerConfig(stage_poly=False, expand="bigram", **base)
    if kind == "apple":
        return LearnerConfig(stage_poly=True, alpha=alpha, **base)
    if kind == "ssm":
        return LearnerConfig(stage_poly=True, alpha=alpha, heuristic="ssm", **base)
    raise InvalidParam(f"{name!r} is not a single method")


def expand_methods(methods: Sequence[str], alphas: Sequence[float]) -> list:
    out = []
    for m in methods:
        names = [f"apple({a:g})" for a in alphas] if m == "apple-best" else [m]
        for n in names:
            parse_method(n)
            if n not in out:
                out.append(n)
    return out


def run_method(train_stream, test_stream, name: str, task: str,
               config: BenchConfig) -> MethodResult:
    """Tune the learning rate (untimed), then time ``config.repeats`` training runs."""
    cfg = method_config(name, task, config)
    lr, _ = tune_learning_rate(train_stream, cfg, config.lr_grid)
    cfg = replace(cfg, learning_rate=lr)
    times, rep = [], None
    for _ in range(max(1, config.repeats)):
        start = time.perf_counter()
        rep = train(train_stream, cfg)
        times.append(time.perf_counter() - start)
    err = evaluate(rep.model, test_stream, task)
    return MethodResult(name, parse_method(name)[1], lr, err, rep.progressive_error,
                        statistics.median(times), rep.features_per_example,
                        rep.examples_seen // cfg.passes, len(test_stream))


def run_dataset(manifest: DatasetManifest, methods: Sequence[str],
                config: BenchConfig) -> BenchRecord:
    rec = BenchRecord(manifest.name)
    try:
        manifest.check()
        tr, te = split_dataset(manifest.path, config.split_fraction, config.split_seed,
                               manifest.task, config.seed, manifest.n)
        for name in expand_methods(methods, config.alphas):
            rec.results[name] = run_method(tr, te, name, manifest.task, config)
        if "apple-best" in methods:
            apples = [r for n, r in rec.results.items() if n.startswith("apple(")]
            best = min(apples, key=lambda r: (r.test_error, r.alpha))
            rec.results["apple-best"] = replace(best, method="apple-best")
    except (StagePolyError, OSError, ValueError) as exc:
        rec.status, rec.message = "failed", f"{type(exc).__name__}: {exc}"
        rec.results.clear()
    return rec


def run_suite(manifests: Sequence[DatasetManifest], methods: Sequence[str],
              config: BenchConfig | None = None) -> list:
    config = config or BenchConfig()
    expand_methods(methods, config.alphas)
    if config.workers > 1 and len(manifests) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(run_dataset, manifests, [methods] * len(manifests),
                                 [config] * len(manifests)))
    return [run_dataset(m, methods, config) for m in manifests]


def cdf_rows(records: Sequence[BenchRecord]) -> list:
    methods = []
    for r in records:
        for name in r.results:
            if name not in methods:
                methods.append(name)
    out = []
    for metric in ("rel_err", "rel_time"):
        for name in methods:
            vals = []
            for r in records:
                if name in r.results:
                    v = r.rel_err(name) if metric == "rel_err" else r.rel_time(name)
                    if v is not None and math.isfinite(v):
                        vals.append(v)
            if vals:
                out.extend({"metric": metric, "method": name, "x": x, "count": c}
                           for x, c in cdf(vals))
    return out


def write_csvs(records: Sequence[BenchRecord], records_path, cdf_path) -> None:
    with open(records_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=RECORD_COLUMNS)
        w.writeheader()
        for r in records:
            w.writerows(r.rows())
    with open(cdf_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CDF_COLUMNS)
        w.writeheader()
        w.writerows(cdf_rows(records))
