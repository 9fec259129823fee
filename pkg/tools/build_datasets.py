"""Regenerate the bundled datasets in src/stagepoly/datasets/.

Sources are the raw files shipped inside two PyPI wheels:

* UCI abalone: ``sklego/data/abalone.zip`` in ``scikit-lego``
* UCI MAGIC gamma telescope and titanic: ``keel_ds/data/balanced/raw/*.dat``
  in ``keel-ds`` (rows shuffled once with a fixed seed; the source is
  sorted by class)

Usage::

    pip download --no-deps scikit-lego keel-ds -d /tmp/wheels
    python tools/build_datasets.py /tmp/wheels

Feature ids are 1-based integers in column order; zero values are dropped.
Binary-task features are linearly rescaled to [-1, 1] per column (the
LIBSVM ``*_scale`` convention).
"""

import glob
import io
import json
import sys
import zipfile
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "stagepoly" / "datasets"


def _wheel(folder, prefix):
    hits = sorted(glob.glob(str(Path(folder) / f"{prefix}*.whl")))
    if not hits:
        sys.exit(f"no {prefix} wheel in {folder}")
    return zipfile.ZipFile(hits[-1])


def scale(X):
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return 2.0 * (X - lo) / span - 1.0


def write(name, X, y, task, convention, note):
    lines = []
    for row, label in zip(X, y):
        feats = " ".join(f"{j + 1}:{v:.6g}" for j, v in enumerate(row) if v != 0)
        lab = f"{label:g}"
        lines.append(f"{lab} | {feats}")
    (OUT / f"{name}.vw").write_text("\n".join(lines) + "\n")
    manifest = {"name": name, "path": f"{name}.vw", "task": task, "n": len(y),
                "label_convention": convention, "d": X.shape[1]}
    (OUT / f"{name}.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"{name}: n={len(y)} d={X.shape[1]} ({note})")


def main(folder):
    OUT.mkdir(parents=True, exist_ok=True)
    lego = _wheel(folder, "scikit_lego")
    inner = zipfile.ZipFile(io.BytesIO(lego.read("sklego/data/abalone.zip")))
    text = inner.read(inner.namelist()[0]).decode().splitlines()[1:]
    rows = [r.split(",") for r in text if r]
    sex = {"M": 1.0, "F": 2.0, "I": 3.0}
    rings = np.array([float(r[8]) for r in rows])
    num = np.array([[float(v) for v in r[1:8]] for r in rows])

    X = np.c_[[sex[r[0]] for r in rows], num]
    write("abalone_bin", scale(X), np.where(rings >= 10, 1, -1), "binary", "pm1",
          "label: rings >= 10; sex coded 1/2/3")

    onehot = np.array([[r[0] == s for s in "MFI"] for r in rows], dtype=float)
    write("abalone_reg", np.c_[onehot, num], rings, "regression", "real",
          "label: ring count; sex one-hot")

    keel = _wheel(folder, "keel_ds")
    for name, src, pos in (("magic04", "magic", "g"), ("titanic", "titanic", "1.0")):
        raw = keel.read(f"keel_ds/data/balanced/raw/{src}.dat").decode().splitlines()
        data = [r.split(",") for r in raw if r and not r.startswith("@")]
        X = np.array([[float(v) for v in r[:-1]] for r in data])
        y = np.array([1 if r[-1].strip() == pos else -1 for r in data])
        # KEEL files are sorted by class; online learners need a mixed stream.
        perm = np.random.default_rng(1234).permutation(len(y))
        X, y = X[perm], y[perm]
        write(name, scale(X), y, "binary", "pm1", f"positive class {pos!r}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else ".")
