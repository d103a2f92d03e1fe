"""Dense float64 linear algebra, activations, Adam and finite-difference checks.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. The helpers
here add shape validation and the handful of numerically careful kernels the
learning modules share. Reductions always run along a fixed axis of a
C-contiguous array, so repeated calls on identical inputs are bitwise equal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Matrix = np.ndarray

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ShapeError(ValueError):
    pass


class GradCheckError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


def as_matrix(x, name: str = "matrix") -> Matrix:
    """Return ``x`` as a C-contiguous 2-D float64 array (no copy if already one)."""
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Softmax along the last axis with max subtraction."""
    z = m - m.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm(m: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    return layer_norm_fwd(m, gain, bias, eps)[0]


def layer_norm_fwd(m, gain, bias, eps=1e-5):
    """Normalise over the last axis. Returns ``(out, xhat, inv_std)`` for backward."""
    mu = m.mean(axis=-1, keepdims=True)
    xc = m - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * gain + bias, xhat, inv_std


def layer_norm_bwd(dout, xhat, inv_std, gain):
    """Gradients ``(dx, dgain, dbias)``; gain/bias grads are summed to shape (1, d)."""
    d = xhat.shape[-1]
    flat_dout = dout.reshape(-1, d)
    flat_xhat = xhat.reshape(-1, d)
    dgain = (flat_dout * flat_xhat).sum(axis=0, keepdims=True)
    dbias = flat_dout.sum(axis=0, keepdims=True)
    dxhat = dout * gain
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def uniform_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> Matrix:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


# ---------------------------------------------------------------- RNG streams

_PURPOSES = {"init": 1, "sample": 2, "noise": 3, "split": 4, "shard": 5, "dropout": 6, "synth": 7, "eval": 8}


def derive_rng(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Independent PCG64 stream for ``(seed, purpose, *keys)``.

    Streams come from ``SeedSequence`` spawn keys, so they are stable across
    platforms and numpy versions that keep the PCG64 bit stream (all of 1.17+).
    """
    if purpose not in _PURPOSES:
        raise ValueError(f"unknown rng purpose {purpose!r}")
    spawn_key = (_PURPOSES[purpose],) + tuple(int(k) for k in keys)
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=spawn_key)
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    shape: tuple
    lr: float = 1e-4
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step: int = 0
    m: Matrix = field(default=None, repr=False)
    v: Matrix = field(default=None, repr=False)

    def __post_init__(self):
        self.shape = tuple(self.shape)
        if self.m is None:
            self.m = np.zeros(self.shape)
        if self.v is None:
            self.v = np.zeros(self.shape)


def adam_step(params: Matrix, grads: Matrix, state: AdamState) -> Matrix:
    """One bias-corrected Adam update. Mutates ``state``; returns new params."""
    if params.shape != grads.shape or params.shape != state.shape:
        raise ShapeError(f"adam shapes differ: params {params.shape}, grads {grads.shape}, state {state.shape}")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (grads * grads)
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class Adam:
    """Adam over a dict of named parameters, updated in place."""

    def __init__(self, params: dict[str, Matrix], lr: float = 1e-4):
        self.lr = lr
        self.states = {k: AdamState(v.shape, lr=lr) for k, v in params.items()}

    def step(self, params: dict[str, Matrix], grads: dict[str, Matrix]) -> None:
        for name in self.states:
            params[name][...] = adam_step(params[name], grads[name], self.states[name])


# --------------------------------------------------------------- grad check


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    worst_index: tuple
    analytic: float
    numeric: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def relative_error(a, n, floor: float = 1e-6):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(
    f: Callable[[], float],
    params: Matrix,
    analytic: Matrix,
    tol: float = 1e-4,
    name: str = "param",
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare ``analytic`` against central differences of ``f`` w.r.t. ``params``.

    ``f`` takes no arguments and reads ``params`` by reference; each coordinate
    is perturbed in place by ``h = 1e-5 * max(1, |theta|)`` and restored.
    The relative error denominator is floored at ``floor`` so exact zeros do
    not divide by zero.
    """
    if params.shape != analytic.shape:
        raise ShapeError(f"{name}: analytic gradient {analytic.shape} vs params {params.shape}")
    numeric = np.zeros_like(params)
    flat = params.reshape(-1)
    if not np.shares_memory(flat, params):
        raise ValueError(f"{name}: params must be contiguous to perturb in place")
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        h = 1e-5 * max(1.0, abs(old))
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise GradCheckError(f"{name}: loss not finite at coordinate {i} ({fp}, {fm})")
        num_flat[i] = (fp - fm) / (2.0 * h)
    err = relative_error(analytic, numeric, floor)
    worst = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else ()
    return GradCheckReport(
        name=name,
        max_rel_error=float(err.max()) if err.size else 0.0,
        worst_index=tuple(int(i) for i in worst),
        analytic=float(analytic[worst]) if err.size else 0.0,
        numeric=float(numeric[worst]) if err.size else 0.0,
        tol=tol,
    )


def grad_check_all(
    f: Callable[[], float],
    params: dict[str, Matrix],
    grads: dict[str, Matrix],
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> list[GradCheckReport]:
    return [grad_check(f, params[k], grads[k], tol=tol, name=k, floor=floor) for k in params]
