"""Gaussian mechanism for uploaded feature batches.

Rows are L2-clipped to ``clip_norm`` so the per-row sensitivity equals the
clip norm, then every entry gets i.i.d. Gaussian noise with the classic
``sigma = C * sqrt(2 ln(1.25 / delta)) / epsilon`` calibration. Only a
:class:`ClippedFeatures` value can be noised through the public path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import Matrix


@dataclass(frozen=True)
class DpConfig:
    epsilon: float = 8.0
    delta: float = 1e-3
    clip_norm: float = 1.0
    enabled: bool = False
    sampling_rate: float = 0.01  # recorded in run metadata only

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 <= self.delta < 1:
            raise ValueError(f"delta must be in [0, 1), got {self.delta}")
        if not self.clip_norm > 0:
            raise ValueError(f"clip_norm must be > 0, got {self.clip_norm}")
        if not 0 < self.sampling_rate <= 1:
            raise ValueError(f"sampling_rate must be in (0, 1], got {self.sampling_rate}")


@dataclass(frozen=True)
class ClippedFeatures:
    values: Matrix
    clip_norm: float


def compute_sigma(cfg: DpConfig) -> float:
    if cfg.delta == 0:
        raise ValueError("delta = 0 makes the Gaussian mechanism sigma infinite")
    return cfg.clip_norm * math.sqrt(2.0 * math.log(1.25 / cfg.delta)) / cfg.epsilon


def _row_scale(features: Matrix, c: float):
    norms = np.sqrt((features * features).sum(axis=1, keepdims=True))
    scale = np.ones_like(norms)
    over = norms > c
    scale[over] = c / norms[over]
    return norms, scale, over


def clip_rows(features: Matrix, c: float) -> ClippedFeatures:
    if not c > 0:
        raise ValueError("clip norm must be positive")
    _, scale, _ = _row_scale(features, c)
    return ClippedFeatures(features * scale, c)


def clip_rows_backward(features: Matrix, c: float, grad: Matrix) -> Matrix:
    """Vector-Jacobian product of :func:`clip_rows` at ``features``.

    Clipped rows map ``r -> c r / |r|`` whose Jacobian is
    ``(c / |r|) (I - r r^T / |r|^2)``; other rows pass the gradient through.
    """
    norms, scale, over = _row_scale(features, c)
    out = grad * scale
    over = over[:, 0]
    if over.any():
        r = features[over]
        n = norms[over]
        proj = (grad[over] * r).sum(axis=1, keepdims=True) / (n * n)
        out[over] = (c / n) * (grad[over] - proj * r)
    return out


def _add_noise_with_sigma(values: Matrix, sigma: float, rng: np.random.Generator) -> Matrix:
    if sigma == 0:
        return values.copy()
    return values + rng.normal(0.0, sigma, size=values.shape)


def add_gaussian_noise(features: ClippedFeatures, cfg: DpConfig, rng: np.random.Generator) -> Matrix:
    if not isinstance(features, ClippedFeatures):
        raise TypeError("add_gaussian_noise needs ClippedFeatures; call clip_rows first")
    if not cfg.enabled:
        return features.values.copy()
    return _add_noise_with_sigma(features.values, compute_sigma(cfg), rng)


def privatize(features: Matrix, cfg: DpConfig, rng: np.random.Generator) -> Matrix:
    """Clip then noise; identity when DP is disabled."""
    if not cfg.enabled:
        return features
    return add_gaussian_noise(clip_rows(features, cfg.clip_norm), cfg, rng)


def privatize_backward(features: Matrix, cfg: DpConfig, grad: Matrix) -> Matrix:
    # noise is additive and parameter-free, so only clipping shapes the gradient
    if not cfg.enabled:
        return grad
    return clip_rows_backward(features, cfg.clip_norm, grad)
