"""The encoder and scorer fused into one model, trained without any message passing.

With one device and DP off this is the centralized baseline, and a protocol
round must reproduce its parameter updates. It also hosts the end-to-end
gradient check used by the CLI and the acceptance suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import FeatureLearner, encoder_backward, encoder_forward
from .numerics import Adam, GradCheckReport, derive_rng, grad_check_all
from .scorer import MlpScorer, bce_loss, score_forward, scorer_backward


@dataclass
class FusedModel:
    learner: FeatureLearner
    scorer: MlpScorer

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        h, _ = encoder_forward(x, self.learner)
        s, _ = score_forward(h, self.scorer)
        return bce_loss(s, y)

    def gradients(self, x: np.ndarray, y: np.ndarray) -> tuple[float, dict, dict]:
        """Loss plus encoder and scorer gradients from a single backward pass."""
        h, etape = encoder_forward(x, self.learner)
        s, stape = score_forward(h, self.scorer)
        sgrads, dh = scorer_backward(self.scorer, stape, y)
        egrads = encoder_backward(etape, dh, self.learner)
        return bce_loss(s, y), egrads, sgrads


class FusedTrainer:
    """Adam on both halves of a :class:`FusedModel`."""

    def __init__(self, model: FusedModel, lr: float = 1e-4):
        self.model = model
        self.enc_adam = Adam(model.learner.params, lr=lr)
        self.sc_adam = Adam(model.scorer.params, lr=lr)

    def step(self, x: np.ndarray, y: np.ndarray) -> float:
        loss, egrads, sgrads = self.model.gradients(x, y)
        self.sc_adam.step(self.model.scorer.params, sgrads)
        self.enc_adam.step(self.model.learner.params, egrads)
        self.model.learner.bump()
        return loss


def random_model(seed: int, d: int = 12, n_heads: int = 3, m: int = 6, hidden=(8, 6), batch_as_sequence=False) -> FusedModel:
    rng = derive_rng(seed, "init")
    learner = FeatureLearner.init(d, n_heads, m, rng, batch_as_sequence=batch_as_sequence)
    scorer = MlpScorer.init(m, rng, hidden=hidden)
    return FusedModel(learner, scorer)


def check_gradients(seed: int, d: int = 12, n_heads: int = 3, m: int = 6, b: int = 4, tol: float = 1e-4,
                    batch_as_sequence: bool = False) -> list[GradCheckReport]:
    """Central-difference check of every encoder and scorer parameter on a random batch."""
    model = random_model(seed, d, n_heads, m, batch_as_sequence=batch_as_sequence)
    rng = derive_rng(seed, "sample")
    x = rng.random((b, d))
    y = np.r_[np.zeros(b - b // 2), np.ones(b // 2)]
    _, egrads, sgrads = model.gradients(x, y)

    def f():
        return model.loss(x, y)

    reports = grad_check_all(f, model.learner.params, egrads, tol=tol)
    reports += grad_check_all(f, model.scorer.params, sgrads, tol=tol)
    return reports
