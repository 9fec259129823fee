"""Binary model files.

Layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"SPLM"
    4       2     format version (u16, currently 1)
    6       1     bits (u8)
    7       1     max_degree (u8)
    8       1     flags (u8): bit 0 bias, bit 1 staged expansion, bit 2 bigram base
    9       1     fixed polynomial degree (u8; 0 = none, 2 = quad, 3 = cubic)
    10      1     task (u8; 0 = binary, 1 = regression)
    11      1     reserved, zero
    12      8     hash seed (u64)
    20      ...   parent count (varint), then per parent: degree (varint)
                  followed by that many variable ids (varint each), parents
                  sorted by (degree, variable tuple)
    ...     4*2^bits  weights, float32

Varints are unsigned LEB128.  Weights are stored as float32, so a model
loaded from disk predicts with the rounded weights; writing it again
reproduces the file byte for byte.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import ModelFormatError
from .expansion import ExpansionState
from .features import HashConfig, Monomial
from .learner import LearnerConfig, OnlineLearner, WeightVector

MAGIC = b"SPLM"
VERSION = 1
_HEADER = struct.Struct("<4sHBBBBBxQ")
_TASKS = ("binary", "regression")
_FLAG_BIAS, _FLAG_STAGED, _FLAG_BIGRAM = 1, 2, 4


def write_varint(out, n: int):
    if n < 0:
        raise ModelFormatError("varints are unsigned")
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.write(bytes((b | 0x80,)))
        else:
            out.write(bytes((b,)))
            return


def read_varint(buf) -> int:
    shift = n = 0
    while True:
        c = buf.read(1)
        if not c:
            raise ModelFormatError("truncated varint")
        b = c[0]
        n |= (b & 0x7F) << shift
        if not b & 0x80:
            return n
        shift += 7
        if shift > 63:
            raise ModelFormatError("varint too long")


def model_bytes(model: OnlineLearner) -> bytes:
    cfg = model.cfg
    if not 0 <= cfg.seed < 1 << 64:
        raise ModelFormatError("seed must fit in an unsigned 64-bit integer")
    flags = ((_FLAG_BIAS if cfg.bias else 0) | (_FLAG_STAGED if cfg.stage_poly else 0)
             | (_FLAG_BIGRAM if cfg.expand == "bigram" else 0))
    out = io.BytesIO()
    out.write(_HEADER.pack(MAGIC, VERSION, cfg.bits, model.state.max_degree, flags,
                           cfg.poly_degree, _TASKS.index(cfg.task), cfg.seed))
    parents = model.state.snapshot_parents()
    write_varint(out, len(parents))
    for p in parents:
        write_varint(out, len(p))
        for v in p:
            write_varint(out, v)
    out.write(np.asarray(model.w.weights, dtype="<f4").tobytes())
    return out.getvalue()


def save_model(model: OnlineLearner, path) -> None:
    Path(path).write_bytes(model_bytes(model))


def model_from_bytes(data: bytes) -> OnlineLearner:
    """Inverse of ``model_bytes``; the result is a frozen, prediction-ready learner."""
    if len(data) < _HEADER.size:
        raise ModelFormatError("file too short for header")
    magic, version, bits, max_degree, flags, poly, task, seed = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ModelFormatError("bad magic bytes")
    if version != VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    if task >= len(_TASKS) or poly not in (0, 2, 3) or flags & ~7:
        raise ModelFormatError("corrupt header fields")
    buf = io.BytesIO(data)
    buf.seek(_HEADER.size)
    parents = []
    for _ in range(read_varint(buf)):
        deg = read_varint(buf)
        if deg < 1:
            raise ModelFormatError("parent of degree 0")
        parents.append(Monomial._from_sorted(tuple(read_varint(buf) for _ in range(deg))))
    raw = buf.read()
    if len(raw) != 4 << bits:
        raise ModelFormatError(f"expected {4 << bits} weight bytes, found {len(raw)}")
    weights = np.frombuffer(raw, dtype="<f4").astype(np.float64)

    expand = {2: "quad", 3: "cubic"}.get(poly, "bigram" if flags & _FLAG_BIGRAM else None)
    try:
        cfg = LearnerConfig(task=_TASKS[task], bits=bits, seed=seed, max_degree=max_degree,
                            stage_poly=bool(flags & _FLAG_STAGED), expand=expand,
                            bias=bool(flags & _FLAG_BIAS), epochs=1)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc
    state = ExpansionState(HashConfig(bits, seed), (), 1.0, max_degree)
    for p in parents:
        state.parents.add(p)
        state.registry.mark_parent(p)
    state.freeze()
    model = OnlineLearner(cfg, state=state)
    model.w = WeightVector(bits, weights)
    return model


def load_model(path) -> OnlineLearner:
    return model_from_bytes(Path(path).read_bytes())
