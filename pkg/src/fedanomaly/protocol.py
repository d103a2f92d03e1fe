"""Round orchestration between simulated edge devices and the cloud coordinator.

Per round, in device-id order:

1. each participating device samples a half/half batch and encodes it;
2. with DP enabled, the features are clipped and noised;
3. the device uploads a ``FeatureBatch``;
4. the coordinator scores it and returns a ``ScoreBatch``;
5. the device computes its BCE loss against the local labels and uploads a
   ``LossReport`` holding the loss, its local sample count and the gradient
   of its loss w.r.t. the score logits;
6. the coordinator forms the sample-weighted global loss, computes every
   device's scorer gradient and feature gradient at the round-start scorer
   parameters, applies one Adam step per device in id order, and sends back
   ``GlobalLoss`` and ``FeatureGrad``;
7. each device backpropagates its ``FeatureGrad`` and steps its own Adam.

Raw rows and labels never leave a device. The logit gradient does reveal the
label to anyone who also knows the score, as in any split-learning setup.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dp as dpm
from .data import BatchSampler
from .encoder import FeatureLearner, encoder_backward, encoder_forward
from .numerics import Adam, derive_rng
from .scorer import MlpScorer, bce_logit_grad, bce_loss, pseudo_label, score_forward, scorer_backward_logits
from .wire import (
    FeatureBatch,
    FeatureGrad,
    GlobalLoss,
    LinkStats,
    LossReport,
    MessageBus,
    ProtocolError,
    ScoreBatch,
)


class NumericDivergence(RuntimeError):
    pass


@dataclass
class _Pending:
    round: int
    raw_features: np.ndarray
    labels: np.ndarray
    tape: object
    scores: np.ndarray | None = None


class EdgeDevice:
    """One edge participant. Holds only its own shard, encoder and optimiser."""

    def __init__(
        self,
        device_id: int,
        learner: FeatureLearner,
        sampler: BatchSampler,
        dp: dpm.DpConfig,
        seed: int,
        lr: float,
        n_train: int,
        test_x: np.ndarray | None = None,
        test_y: np.ndarray | None = None,
    ):
        self.device_id = device_id
        self.learner = learner
        self.sampler = sampler
        self.dp = dp
        self.seed = seed
        self.adam = Adam(learner.params, lr=lr)
        self.n_train = n_train
        self.test_x = test_x
        self.test_y = test_y
        self._pending: _Pending | None = None

    def _noise_rng(self, round_idx: int, purpose: str = "noise") -> np.random.Generator:
        return derive_rng(self.seed, purpose, self.device_id, round_idx)

    def extract(self, round_idx: int) -> FeatureBatch:
        x, y = self.sampler.next_batch()
        h, tape = encoder_forward(x, self.learner)
        upload = dpm.privatize(h, self.dp, self._noise_rng(round_idx))
        self._pending = _Pending(round_idx, h, y, tape)
        return FeatureBatch(self.device_id, round_idx, upload)

    def report_loss(self, msg: ScoreBatch) -> LossReport:
        p = self._pending
        if p is None or p.round != msg.round:
            raise ProtocolError(f"device {self.device_id}: scores for round {msg.round} without a pending batch")
        if msg.scores.shape != p.labels.shape:
            raise ProtocolError(f"device {self.device_id}: got {msg.scores.shape} scores for {p.labels.shape} rows")
        p.scores = msg.scores
        loss = bce_loss(msg.scores, p.labels)
        return LossReport(self.device_id, msg.round, loss, self.n_train, bce_logit_grad(msg.scores, p.labels))

    def apply_feature_grad(self, msg: FeatureGrad) -> None:
        p = self._pending
        if p is None or p.round != msg.round:
            raise ProtocolError(f"device {self.device_id}: feature grad for round {msg.round} without a pending batch")
        if msg.grad.shape != p.raw_features.shape:
            raise ProtocolError(
                f"device {self.device_id}: feature grad {msg.grad.shape} vs uploaded {p.raw_features.shape}"
            )
        grad = dpm.privatize_backward(p.raw_features, self.dp, msg.grad)
        grads = encoder_backward(p.tape, grad, self.learner)
        self.adam.step(self.learner.params, grads)
        self.learner.bump()
        self._pending = None

    def encode_for_eval(self, x: np.ndarray, tag: int, chunk: int = 2048) -> np.ndarray:
        """Encode (and privatise, if enabled) held-out rows without touching training state."""
        rng = self._noise_rng(tag, "eval")
        out = []
        for start in range(0, len(x), chunk):
            h, _ = encoder_forward(x[start:start + chunk], self.learner)
            out.append(dpm.privatize(h, self.dp, rng))
        return np.vstack(out) if out else np.zeros((0, self.learner.m))


class Coordinator:
    def __init__(self, scorer: MlpScorer, lr: float, seed: int, participation: float = 1.0):
        self.scorer = scorer
        self.adam = Adam(scorer.params, lr=lr)
        self.seed = seed
        self.participation = participation
        self.round = 0
        self._tapes: dict[int, object] = {}

    def participants(self, device_ids: list[int], round_idx: int) -> list[int]:
        ids = sorted(device_ids)
        if self.participation >= 1.0:
            return ids
        rng = derive_rng(self.seed, "dropout", round_idx)
        keep = rng.random(len(ids)) < self.participation
        if not keep.any():
            keep[rng.integers(len(ids))] = True
        return [i for i, k in zip(ids, keep) if k]

    def score(self, msg: FeatureBatch) -> ScoreBatch:
        if msg.features.ndim != 2 or msg.features.shape[1] != self.scorer.m:
            raise ProtocolError(f"device {msg.device_id}: features {msg.features.shape}, scorer expects m={self.scorer.m}")
        scores, tape = score_forward(msg.features, self.scorer)
        self._tapes[msg.device_id] = (msg.round, tape)
        return ScoreBatch(msg.device_id, msg.round, scores)

    def score_features(self, features: np.ndarray) -> np.ndarray:
        return score_forward(features, self.scorer)[0]

    def update(self, reports: list[LossReport]) -> tuple[float, list[FeatureGrad]]:
        """Aggregate losses, step the scorer once per report, return feature gradients."""
        global_loss = aggregate_losses(reports)
        pending = []
        for rep in sorted(reports, key=lambda r: r.device_id):
            rnd, tape = self._tapes.pop(rep.device_id, (None, None))
            if tape is None or rnd != rep.round:
                raise ProtocolError(f"device {rep.device_id}: loss report for round {rep.round} without scores")
            if rep.logit_grad.shape != tape.scores.shape:
                raise ProtocolError(f"device {rep.device_id}: logit grad {rep.logit_grad.shape} vs {tape.scores.shape}")
            grads, fgrad = scorer_backward_logits(self.scorer, tape, rep.logit_grad)
            pending.append((rep, grads, fgrad))
        out = []
        for rep, grads, fgrad in pending:
            self.adam.step(self.scorer.params, grads)
            out.append(FeatureGrad(rep.device_id, rep.round, fgrad))
        self.round += 1
        return global_loss, out


def aggregate_losses(reports: list[LossReport]) -> float:
    """Sample-count weighted mean of device losses."""
    if not reports:
        raise ProtocolError("no loss reports to aggregate")
    n = np.array([r.n_samples for r in reports], dtype=np.float64)
    if (n < 0).any() or n.sum() <= 0:
        raise ProtocolError(f"invalid sample counts {n.tolist()}")
    losses = np.array([r.loss for r in reports])
    return float(np.dot(n / n.sum(), losses))


@dataclass
class RoundRecord:
    round: int
    global_loss: float
    device_losses: dict[int, float]
    participants: list[int]
    bytes_up: int
    bytes_down: int
    feature_payload: int
    wall_time: float = field(default=0.0, compare=False)

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "global_loss": self.global_loss,
            "device_losses": {str(k): v for k, v in self.device_losses.items()},
            "participants": self.participants,
            "bytes_up": self.bytes_up,
            "bytes_down": self.bytes_down,
            "feature_payload": self.feature_payload,
            "wall_time": self.wall_time,
        }


def run_round(
    devices: list[EdgeDevice],
    coord: Coordinator,
    bus: MessageBus | None = None,
    workers: int = 1,
    pool: ThreadPoolExecutor | None = None,
) -> RoundRecord:
    t0 = time.perf_counter()
    bus = bus or MessageBus()
    round_idx = coord.round
    by_id = {d.device_id: d for d in devices}
    active = [by_id[i] for i in coord.participants(list(by_id), round_idx)]
    before = bus.snapshot()

    # steps 1-2 touch only device-owned state, so they may run concurrently
    if workers > 1 or pool is not None:
        own = pool is None
        pool = pool or ThreadPoolExecutor(max_workers=workers)
        try:
            batches = list(pool.map(lambda d: d.extract(round_idx), active))
        finally:
            if own:
                pool.shutdown()
    else:
        batches = [d.extract(round_idx) for d in active]

    reports = []
    for dev, fb in zip(active, batches):
        scores = coord.score(bus.upload(fb))
        reports.append(bus.upload(dev.report_loss(bus.download(scores))))

    global_loss, fgrads = coord.update(reports)
    if not np.isfinite(global_loss):
        raise NumericDivergence(f"global loss is {global_loss} at round {round_idx}")
    for dev, fg in zip(active, fgrads):
        bus.download(GlobalLoss(dev.device_id, round_idx, global_loss))
        dev.apply_feature_grad(bus.download(fg))

    after = bus.snapshot()

    def delta(attr):
        return sum(getattr(after[i], attr) - getattr(before.get(i, LinkStats()), attr) for i in after)

    return RoundRecord(
        round=round_idx,
        global_loss=global_loss,
        device_losses={r.device_id: r.loss for r in reports},
        participants=[d.device_id for d in active],
        bytes_up=delta("bytes_up"),
        bytes_down=delta("bytes_down"),
        feature_payload=delta("feature_payload"),
        wall_time=time.perf_counter() - t0,
    )


@dataclass
class Alert:
    device_id: int
    index: int
    score: float


@dataclass
class Detection:
    device_id: int
    scores: np.ndarray
    pseudo_labels: np.ndarray
    alerts: list[Alert]


def detect(devices: list[EdgeDevice], coord: Coordinator, tau: float, data: dict[int, np.ndarray] | None = None, tag: int = 0) -> list[Detection]:
    """Score each device's held-out rows and raise an alert for every score above ``tau``."""
    out = []
    for dev in sorted(devices, key=lambda d: d.device_id):
        x = dev.test_x if data is None else data[dev.device_id]
        scores = coord.score_features(dev.encode_for_eval(x, tag))
        alerts = [Alert(dev.device_id, int(i), float(scores[i])) for i in np.flatnonzero(scores > tau)]
        out.append(Detection(dev.device_id, scores, pseudo_label(scores, tau), alerts))
    return out
