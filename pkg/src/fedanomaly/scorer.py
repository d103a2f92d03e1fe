"""Cloud-side anomaly scorer: an ``m -> h1 -> h2 -> 1`` ReLU MLP with a sigmoid head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Matrix, ShapeError, TapeError, sigmoid, uniform_init

PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")
SCORE_CLAMP = 1e-12


@dataclass
class MlpScorer:
    m: int
    hidden: tuple[int, int]
    params: dict[str, Matrix]

    @classmethod
    def init(cls, m: int, rng: np.random.Generator, hidden: tuple[int, int] = (64, 32)) -> "MlpScorer":
        h1, h2 = hidden
        p = {
            "w1": uniform_init(rng, m, h1),
            "b1": np.zeros((1, h1)),
            "w2": uniform_init(rng, h1, h2),
            "b2": np.zeros((1, h2)),
            "w3": uniform_init(rng, h2, 1),
            "b3": np.zeros((1, 1)),
        }
        return cls(m, (h1, h2), p)

    def copy(self) -> "MlpScorer":
        return MlpScorer(self.m, self.hidden, {k: v.copy() for k, v in self.params.items()})


@dataclass
class ScorerTape:
    features: Matrix = field(repr=False)
    z1: Matrix = field(repr=False)
    a1: Matrix = field(repr=False)
    z2: Matrix = field(repr=False)
    a2: Matrix = field(repr=False)
    scores: np.ndarray = field(repr=False)


def score_forward(features: Matrix, scorer: MlpScorer) -> tuple[np.ndarray, ScorerTape]:
    if features.ndim != 2 or features.shape[1] != scorer.m:
        raise ShapeError(f"features {features.shape} do not have {scorer.m} columns")
    p = scorer.params
    z1 = features @ p["w1"] + p["b1"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ p["w2"] + p["b2"]
    a2 = np.maximum(z2, 0.0)
    scores = sigmoid(a2 @ p["w3"] + p["b3"])[:, 0]
    return scores, ScorerTape(features, z1, a1, z2, a2, scores)


def pseudo_label(scores: np.ndarray, tau: float = 0.5) -> np.ndarray:
    """1 where ``score >= tau``; a score exactly at the threshold counts as anomalous."""
    if not 0 < tau < 1:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    return (np.asarray(scores) >= tau).astype(np.int64)


def bce_loss(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy with scores clamped away from 0 and 1."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape:
        raise ShapeError(f"scores {scores.shape} vs labels {labels.shape}")
    x = np.clip(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    return float(-np.mean(labels * np.log(x) + (1.0 - labels) * np.log(1.0 - x)))


def bce_logit_grad(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(mean BCE)/d(logit) = (score - label) / b."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape:
        raise ShapeError(f"scores {scores.shape} vs labels {labels.shape}")
    return (scores - labels) / scores.size


def scorer_backward_logits(scorer: MlpScorer, tape: ScorerTape | None, dlogits: np.ndarray):
    """Backprop a per-sample logit gradient. Returns ``(param grads, feature grad)``."""
    if tape is None:
        raise TapeError("scorer_backward called without a forward tape")
    dz3 = np.asarray(dlogits, dtype=np.float64).reshape(-1, 1)
    if dz3.shape[0] != tape.features.shape[0]:
        raise ShapeError(f"logit grad has {dz3.shape[0]} rows, tape batch has {tape.features.shape[0]}")
    p = scorer.params
    g = {}
    g["w3"] = tape.a2.T @ dz3
    g["b3"] = dz3.sum(axis=0, keepdims=True)
    dz2 = (dz3 @ p["w3"].T) * (tape.z2 > 0)
    g["w2"] = tape.a1.T @ dz2
    g["b2"] = dz2.sum(axis=0, keepdims=True)
    dz1 = (dz2 @ p["w2"].T) * (tape.z1 > 0)
    g["w1"] = tape.features.T @ dz1
    g["b1"] = dz1.sum(axis=0, keepdims=True)
    feature_grad = dz1 @ p["w1"].T
    return {k: g[k] for k in PARAM_NAMES}, feature_grad


def scorer_backward(scorer: MlpScorer, tape: ScorerTape | None, labels: np.ndarray):
    if tape is None:
        raise TapeError("scorer_backward called without a forward tape")
    return scorer_backward_logits(scorer, tape, bce_logit_grad(tape.scores, labels))
