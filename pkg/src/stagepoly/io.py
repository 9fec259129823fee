"""Reading examples from text files, splitting, and dataset manifests.

Line format (one example per line)::

    <label> [<importance>] | <feat>[:<value>] <feat>[:<value>] ...

``feat`` is either a non-negative integer id or an arbitrary token, which is
hashed to a base id.  A missing value means 1.0.  Repeated features within
a line sum their values.  There is a single flat namespace.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import EmptyData, ManifestError, ParseError
from .features import Example, hash_token

TASKS = ("binary", "regression")


def _float(text: str, what: str, line_number):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"unparseable {what} {text!r}", line_number) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite {what} {text!r}", line_number)
    return v


def parse_example(line: str, task: str = "binary", seed: int = 0,
                  line_number: int | None = None) -> Example:
    head, bar, tail = line.partition("|")
    if not bar:
        raise ParseError("missing '|' separator", line_number)
    fields = head.split()
    if not fields or len(fields) > 2:
        raise ParseError("expected '<label> [<importance>]' before '|'", line_number)
    label = _float(fields[0], "label", line_number)
    importance = _float(fields[1], "importance", line_number) if len(fields) == 2 else 1.0
    if importance <= 0:
        raise ParseError("importance must be > 0", line_number)
    if task == "binary":
        if label == -1:
            label = 0.0
        elif label not in (0.0, 1.0):
            raise ParseError(f"binary label must be -1, 0 or 1, got {fields[0]!r}", line_number)

    acc: dict = {}
    for tok in tail.split():
        name, colon, val = tok.rpartition(":")
        if colon:
            value = _float(val, "feature value", line_number)
        else:
            name, value = tok, 1.0
        if not name:
            raise ParseError(f"empty feature name in {tok!r}", line_number)
        fid = int(name) if name.isdigit() else hash_token(name, seed)
        acc[fid] = acc.get(fid, 0.0) + value
    return Example(ids=list(acc), values=list(acc.values()), label=label, importance=importance)


def format_example(ex: Example) -> str:
    head = repr(ex.label) if ex.importance == 1.0 else f"{ex.label!r} {ex.importance!r}"
    feats = " ".join(f"{i}:{v!r}" for i, v in zip(ex.ids, ex.values))
    return f"{head} | {feats}".rstrip()


def _is_example_line(line: str) -> bool:
    s = line.strip()
    return bool(s) and not s.startswith("#")


def count_examples(path) -> int:
    with open(path, encoding="utf-8") as fh:
        return sum(1 for line in fh if _is_example_line(line))


class ExampleStream:
    """Re-iterable reader over an example file.

    ``mask`` (boolean per example, in file order) restricts the stream to a
    subset; reading holds one line in memory at a time.
    """

    def __init__(self, path, task: str = "binary", seed: int = 0, mask=None,
                 expected: int | None = None):
        self.path = Path(path)
        self.task = task
        self.seed = seed
        self.mask = None if mask is None else np.asarray(mask, dtype=bool)
        self.expected = expected
        self._len = None

    def __iter__(self) -> Iterator[Example]:
        k = -1
        mask = self.mask
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not _is_example_line(line):
                    continue
                k += 1
                if mask is not None and (k >= len(mask) or not mask[k]):
                    continue
                yield parse_example(line, self.task, self.seed, lineno)
        if self.expected is not None and k + 1 != self.expected:
            raise ManifestError(f"{self.path}: declared {self.expected} examples, found {k + 1}")

    def __len__(self):
        if self._len is None:
            if self.mask is not None:
                self._len = int(self.mask.sum())
            else:
                self._len = count_examples(self.path)
        return self._len


def _split_keys(n: int, seed: int) -> np.ndarray:
    # splitmix64 over example indices
    with np.errstate(over="ignore"):
        z = np.arange(n, dtype=np.uint64) ^ np.uint64(seed & ((1 << 64) - 1))
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def split_mask(n: int, fraction: float = 0.8, seed: int = 0) -> np.ndarray:
    """Boolean train mask: the ``round(fraction * n)`` indices with smallest seeded hash."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    k = int(math.floor(fraction * n + 0.5))
    order = np.argsort(_split_keys(n, seed), kind="stable")
    mask = np.zeros(n, dtype=bool)
    mask[order[:k]] = True
    return mask


def split_dataset(path, fraction: float = 0.8, seed: int = 0, task: str = "binary",
                  hash_seed: int = 0, expected: int | None = None):
    """Deterministic disjoint train/test split of the examples in ``path``."""
    n = count_examples(path)
    if n == 0:
        raise EmptyData(f"{path}: no examples")
    if expected is not None and n != expected:
        raise ManifestError(f"{path}: declared {expected} examples, found {n}")
    mask = split_mask(n, fraction, seed)
    return (ExampleStream(path, task, hash_seed, mask),
            ExampleStream(path, task, hash_seed, ~mask))


@dataclass
class DatasetManifest:
    """Description of one dataset file.

    JSON schema: ``name`` (str), ``path`` (str, relative to the manifest),
    ``task`` ("binary" | "regression"), optional ``n`` (int), optional
    ``label_convention`` ("01" | "pm1" | "real"), optional ``d`` (int).
    """

    name: str
    path: str
    task: str
    n: int | None = None
    label_convention: str | None = None
    d: int | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ManifestError(f"{self.name}: unknown task {self.task!r}")

    def open(self, hash_seed: int = 0) -> ExampleStream:
        return ExampleStream(self.path, self.task, hash_seed, expected=self.n)

    def check(self) -> int:
        n = count_examples(self.path)
        if n == 0:
            raise EmptyData(f"{self.name}: no examples")
        if self.n is not None and n != self.n:
            raise ManifestError(f"{self.name}: declared {self.n} examples, found {n}")
        return n

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    unknown = set(raw) - {"name", "path", "task", "n", "label_convention", "d"}
    if unknown:
        raise ManifestError(f"{path}: unknown keys {sorted(unknown)}")
    for key in ("name", "path", "task"):
        if key not in raw:
            raise ManifestError(f"{path}: missing {key!r}")
    data_path = raw["path"]
    if not os.path.isabs(data_path):
        data_path = str(path.parent / data_path)
    return DatasetManifest(raw["name"], data_path, raw["task"], raw.get("n"),
                           raw.get("label_convention"), raw.get("d"))


def bundled_manifest(name: str) -> DatasetManifest:
    """Manifest of one of the small public datasets shipped with the package."""
    here = Path(__file__).parent / "datasets"
    return load_manifest(here / f"{name}.json")


def bundled_names() -> list:
    here = Path(__file__).parent / "datasets"
    return sorted(p.stem for p in here.glob("*.json"))
