"""Edge-side feature learner: one post-norm Transformer block plus a linear
compression layer, with an explicit reverse pass.

Each tabular row is a sequence of length one by default, so the model
dimension equals the raw feature count ``d`` and heads must divide ``d``.
With ``batch_as_sequence=True`` the whole batch becomes one sequence of
``b`` tokens instead; this couples samples and is meant for exploration only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    Matrix,
    ShapeError,
    TapeError,
    layer_norm_bwd,
    layer_norm_fwd,
    softmax_rows,
    uniform_init,
)

PARAM_NAMES = (
    "w_q", "w_k", "w_v", "w_o",
    "ln1_g", "ln1_b",
    "w_ff1", "b_ff1", "w_ff2", "b_ff2",
    "ln2_g", "ln2_b",
    "w_c", "b_c",
)


def positional_encoding(seq_len: int, dim: int) -> Matrix:
    """Sinusoidal table of shape ``(seq_len, dim)``.

    Column ``2i`` holds ``sin(p * w)`` and column ``2i+1`` holds ``cos(p * w)``
    with ``w = 10000 ** (-2i / dim)``.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    even = np.arange(0, dim, 2, dtype=np.float64)
    omega = 1.0 / np.power(10000.0, even / dim)
    pe = np.zeros((seq_len, dim))
    pe[:, 0::2] = np.sin(pos * omega)
    pe[:, 1::2] = np.cos(pos * omega[: dim // 2])
    return pe


@dataclass
class FeatureLearner:
    d: int
    n_heads: int
    m: int
    d_ff: int
    params: dict[str, Matrix]
    ln_eps: float = 1e-5
    batch_as_sequence: bool = False
    version: int = 0

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ValueError(f"{self.n_heads} heads do not divide input dim {self.d}")
        if not 1 <= self.m <= self.d:
            raise ValueError(f"feature dim m={self.m} must be in [1, d={self.d}]")

    @property
    def d_head(self) -> int:
        return self.d // self.n_heads

    @classmethod
    def init(
        cls,
        d: int,
        n_heads: int,
        m: int,
        rng: np.random.Generator,
        d_ff: int | None = None,
        ln_eps: float = 1e-5,
        batch_as_sequence: bool = False,
    ) -> "FeatureLearner":
        d_ff = 2 * d if d_ff is None else d_ff
        p = {
            "w_q": uniform_init(rng, d, d),
            "w_k": uniform_init(rng, d, d),
            "w_v": uniform_init(rng, d, d),
            "w_o": uniform_init(rng, d, d),
            "ln1_g": np.ones((1, d)),
            "ln1_b": np.zeros((1, d)),
            "w_ff1": uniform_init(rng, d, d_ff),
            "b_ff1": np.zeros((1, d_ff)),
            "w_ff2": uniform_init(rng, d_ff, d),
            "b_ff2": np.zeros((1, d)),
            "ln2_g": np.ones((1, d)),
            "ln2_b": np.zeros((1, d)),
            "w_c": uniform_init(rng, d, m),
            "b_c": np.zeros((1, m)),
        }
        return cls(d, n_heads, m, d_ff, p, ln_eps=ln_eps, batch_as_sequence=batch_as_sequence)

    def bump(self) -> None:
        """Mark parameters as changed; tapes recorded earlier become stale."""
        self.version += 1

    def copy(self) -> "FeatureLearner":
        return FeatureLearner(
            self.d, self.n_heads, self.m, self.d_ff,
            {k: v.copy() for k, v in self.params.items()},
            ln_eps=self.ln_eps, batch_as_sequence=self.batch_as_sequence,
        )


@dataclass
class EncoderTape:
    batch_shape: tuple
    version: int
    seq_shape: tuple  # (n_seq, seq_len)
    x0: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)  # (S, H, L, dh)
    k: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    attn: np.ndarray = field(repr=False)  # (S, H, L, L)
    concat: np.ndarray = field(repr=False)
    ln1: tuple = field(repr=False)
    n1: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    a: np.ndarray = field(repr=False)
    ln2: tuple = field(repr=False)
    n2: np.ndarray = field(repr=False)


def _as_sequences(batch: Matrix, learner: FeatureLearner) -> np.ndarray:
    b, d = batch.shape
    if learner.batch_as_sequence:
        return batch.reshape(1, b, d)
    return batch.reshape(b, 1, d)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    s, l, d = x.shape
    return x.reshape(s, l, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    s, h, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(s, l, h * dh)


def multi_head_attention(x0: np.ndarray, learner: FeatureLearner):
    """Scaled dot-product attention over ``(S, L, d)`` sequences.

    Returns ``(output, q, k, v, weights, concat)``; the last five go on the tape.
    """
    if x0.shape[-1] != learner.d:
        raise ShapeError(f"attention input has {x0.shape[-1]} columns, expected {learner.d}")
    p = learner.params
    h = learner.n_heads
    q = _split_heads(x0 @ p["w_q"], h)
    k = _split_heads(x0 @ p["w_k"], h)
    v = _split_heads(x0 @ p["w_v"], h)
    weights = softmax_rows(q @ k.transpose(0, 1, 3, 2) / math.sqrt(learner.d_head))
    concat = _merge_heads(weights @ v)
    return concat @ p["w_o"], q, k, v, weights, concat


def encoder_forward(batch: Matrix, learner: FeatureLearner) -> tuple[Matrix, EncoderTape]:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != learner.d:
        raise ShapeError(f"batch shape {batch.shape} does not match input dim {learner.d}")
    if not np.all(np.isfinite(batch)):
        raise ValueError("encoder input contains non-finite values")
    p = learner.params
    x = _as_sequences(batch, learner)
    s, l, d = x.shape
    x0 = x + positional_encoding(l, d)
    attn_out, q, k, v, weights, concat = multi_head_attention(x0, learner)
    n1, xhat1, inv1 = layer_norm_fwd(x0 + attn_out, p["ln1_g"], p["ln1_b"], learner.ln_eps)
    u = n1 @ p["w_ff1"] + p["b_ff1"]
    a = np.maximum(u, 0.0)
    n2, xhat2, inv2 = layer_norm_fwd(n1 + a @ p["w_ff2"] + p["b_ff2"], p["ln2_g"], p["ln2_b"], learner.ln_eps)
    features = (n2 @ p["w_c"] + p["b_c"]).reshape(batch.shape[0], learner.m)
    tape = EncoderTape(
        batch_shape=batch.shape, version=learner.version, seq_shape=(s, l),
        x0=x0, q=q, k=k, v=v, attn=weights, concat=concat,
        ln1=(xhat1, inv1), n1=n1, u=u, a=a, ln2=(xhat2, inv2), n2=n2,
    )
    return features, tape


def encoder_backward(tape: EncoderTape, feature_grad: Matrix, learner: FeatureLearner) -> dict[str, Matrix]:
    """Gradients of every learner parameter given dLoss/dfeatures."""
    if tape.version != learner.version:
        raise TapeError(f"tape recorded at version {tape.version}, learner is at {learner.version}")
    b = tape.batch_shape[0]
    if feature_grad.shape != (b, learner.m):
        raise ShapeError(f"feature grad {feature_grad.shape} does not match batch ({b}, {learner.m})")
    p = learner.params
    d, h = learner.d, learner.n_heads
    s, l = tape.seq_shape

    def flat(x):
        return x.reshape(-1, x.shape[-1])

    g = {}
    dh = feature_grad.reshape(s, l, learner.m)
    g["w_c"] = flat(tape.n2).T @ flat(dh)
    g["b_c"] = flat(dh).sum(axis=0, keepdims=True)
    dn2 = dh @ p["w_c"].T

    dr2, g["ln2_g"], g["ln2_b"] = layer_norm_bwd(dn2, *tape.ln2, p["ln2_g"])
    g["w_ff2"] = flat(tape.a).T @ flat(dr2)
    g["b_ff2"] = flat(dr2).sum(axis=0, keepdims=True)
    du = (dr2 @ p["w_ff2"].T) * (tape.u > 0)
    g["w_ff1"] = flat(tape.n1).T @ flat(du)
    g["b_ff1"] = flat(du).sum(axis=0, keepdims=True)
    dn1 = dr2 + du @ p["w_ff1"].T

    dr1, g["ln1_g"], g["ln1_b"] = layer_norm_bwd(dn1, *tape.ln1, p["ln1_g"])
    g["w_o"] = flat(tape.concat).T @ flat(dr1)
    dheads = _split_heads(dr1 @ p["w_o"].T, h)
    dweights = dheads @ tape.v.transpose(0, 1, 3, 2)
    dv = tape.attn.transpose(0, 1, 3, 2) @ dheads
    dscores = tape.attn * (dweights - (dweights * tape.attn).sum(axis=-1, keepdims=True))
    dscores /= math.sqrt(learner.d_head)
    dq = dscores @ tape.k
    dk = dscores.transpose(0, 1, 3, 2) @ tape.q
    x0 = flat(tape.x0)
    g["w_q"] = x0.T @ flat(_merge_heads(dq))
    g["w_k"] = x0.T @ flat(_merge_heads(dk))
    g["w_v"] = x0.T @ flat(_merge_heads(dv))
    assert all(g[k].shape == p[k].shape for k in PARAM_NAMES)
    return {k: g[k] for k in PARAM_NAMES}
