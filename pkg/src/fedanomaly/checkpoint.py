"""Named-matrix checkpoint files.

Layout (all little endian)::

    4 bytes  magic b"FANM"
    u16      format version (1)
    u32      number of entries
    per entry:
        u16    name length, then UTF-8 name
        u32    rows, u32 cols
        f64    rows * cols values, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .encoder import PARAM_NAMES as ENCODER_PARAMS
from .encoder import FeatureLearner
from .scorer import PARAM_NAMES as SCORER_PARAMS
from .scorer import MlpScorer

MAGIC = b"FANM"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_matrices(path, entries: list[tuple[str, np.ndarray]]) -> None:
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(entries))]
    for name, m in entries:
        m = np.ascontiguousarray(m, dtype="<f8")
        if m.ndim != 2:
            raise CheckpointError(f"{name}: checkpoint entries must be 2-D")
        raw = name.encode()
        chunks += [struct.pack("<H", len(raw)), raw, struct.pack("<II", *m.shape), m.tobytes()]
    Path(path).write_bytes(b"".join(chunks))


def load_matrices(path) -> list[tuple[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 10
    out = []
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + n].decode()
            off += n
            rows, cols = struct.unpack_from("<II", buf, off)
            off += 8
            end = off + 8 * rows * cols
            if end > len(buf):
                raise CheckpointError(f"{path}: truncated entry {name}")
            out.append((name, np.frombuffer(buf[off:end], dtype="<f8").astype(np.float64).reshape(rows, cols)))
            off = end
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated file") from exc
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return out


def save_learner(path, learner: FeatureLearner) -> None:
    arch = np.array([[learner.n_heads, learner.ln_eps, float(learner.batch_as_sequence)]])
    save_matrices(path, [("arch", arch)] + [(k, learner.params[k]) for k in ENCODER_PARAMS])


def load_learner(path) -> FeatureLearner:
    entries = dict(load_matrices(path))
    missing = [k for k in ("arch",) + ENCODER_PARAMS if k not in entries]
    if missing:
        raise CheckpointError(f"{path}: missing entries {missing}")
    heads, eps, bas = entries.pop("arch")[0]
    params = {k: entries[k] for k in ENCODER_PARAMS}
    d, m = params["w_c"].shape
    return FeatureLearner(d, int(heads), m, params["w_ff1"].shape[1], params, ln_eps=float(eps), batch_as_sequence=bool(bas))


def save_scorer(path, scorer: MlpScorer) -> None:
    save_matrices(path, [(k, scorer.params[k]) for k in SCORER_PARAMS])


def load_scorer(path) -> MlpScorer:
    entries = dict(load_matrices(path))
    missing = [k for k in SCORER_PARAMS if k not in entries]
    if missing:
        raise CheckpointError(f"{path}: missing entries {missing}")
    params = {k: entries[k] for k in SCORER_PARAMS}
    return MlpScorer(params["w1"].shape[0], (params["w1"].shape[1], params["w2"].shape[1]), params)
