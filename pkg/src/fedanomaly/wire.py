"""Binary framing for protocol messages.

Every frame is::

    u32  body length in bytes (little endian, excludes these 4 bytes)
    u8   message tag
    u32  round index
    u16  device id
    ...  payload: one or more matrices

and every matrix is ``u32 rows, u32 cols`` followed by ``rows * cols``
little-endian f64 values in row-major order. Payloads per tag:

    1 FeatureBatch  features (b x m)
    2 ScoreBatch    scores (b x 1)
    3 LossReport    [loss, n_samples] (1 x 2), logit gradient (b x 1)
    4 GlobalLoss    [loss] (1 x 1)
    5 FeatureGrad   gradient (b x m)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import ClassVar, Union

import numpy as np

FRAME_HEADER = struct.Struct("<IBIH")
MATRIX_HEADER = struct.Struct("<II")
FLOAT_BYTES = 8


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class FeatureBatch:
    TAG: ClassVar[int] = 1
    device_id: int
    round: int
    features: np.ndarray


@dataclass(frozen=True)
class ScoreBatch:
    TAG: ClassVar[int] = 2
    device_id: int
    round: int
    scores: np.ndarray


@dataclass(frozen=True)
class LossReport:
    TAG: ClassVar[int] = 3
    device_id: int
    round: int
    loss: float
    n_samples: int
    logit_grad: np.ndarray


@dataclass(frozen=True)
class GlobalLoss:
    TAG: ClassVar[int] = 4
    device_id: int
    round: int
    loss: float


@dataclass(frozen=True)
class FeatureGrad:
    TAG: ClassVar[int] = 5
    device_id: int
    round: int
    grad: np.ndarray


Message = Union[FeatureBatch, ScoreBatch, LossReport, GlobalLoss, FeatureGrad]
UPLINK = (FeatureBatch, LossReport)
DOWNLINK = (ScoreBatch, GlobalLoss, FeatureGrad)
_BY_TAG = {cls.TAG: cls for cls in UPLINK + DOWNLINK}


def _pack_matrix(m: np.ndarray) -> bytes:
    m = np.ascontiguousarray(m, dtype="<f8")
    if m.ndim != 2:
        raise ProtocolError(f"wire matrices must be 2-D, got shape {m.shape}")
    return MATRIX_HEADER.pack(*m.shape) + m.tobytes()


def _unpack_matrix(buf: memoryview, offset: int) -> tuple[np.ndarray, int]:
    if offset + MATRIX_HEADER.size > len(buf):
        raise ProtocolError("truncated matrix header")
    rows, cols = MATRIX_HEADER.unpack_from(buf, offset)
    offset += MATRIX_HEADER.size
    end = offset + rows * cols * FLOAT_BYTES
    if end > len(buf):
        raise ProtocolError(f"truncated matrix body ({rows}x{cols})")
    m = np.frombuffer(buf[offset:end], dtype="<f8").astype(np.float64).reshape(rows, cols)
    return m, end


def _payload(msg: Message) -> list[np.ndarray]:
    if isinstance(msg, FeatureBatch):
        return [msg.features]
    if isinstance(msg, ScoreBatch):
        return [np.asarray(msg.scores).reshape(-1, 1)]
    if isinstance(msg, LossReport):
        return [np.array([[msg.loss, float(msg.n_samples)]]), np.asarray(msg.logit_grad).reshape(-1, 1)]
    if isinstance(msg, GlobalLoss):
        return [np.array([[msg.loss]])]
    if isinstance(msg, FeatureGrad):
        return [msg.grad]
    raise ProtocolError(f"cannot encode {type(msg).__name__}")


def encode(msg: Message) -> bytes:
    body = b"".join(_pack_matrix(m) for m in _payload(msg))
    header = FRAME_HEADER.pack(FRAME_HEADER.size - 4 + len(body), msg.TAG, msg.round, msg.device_id)
    return header + body


def decode(frame: bytes) -> Message:
    buf = memoryview(frame)
    if len(buf) < FRAME_HEADER.size:
        raise ProtocolError("frame shorter than header")
    length, tag, rnd, dev = FRAME_HEADER.unpack_from(buf, 0)
    if length + 4 != len(buf):
        raise ProtocolError(f"length prefix {length} does not match frame of {len(buf)} bytes")
    cls = _BY_TAG.get(tag)
    if cls is None:
        raise ProtocolError(f"unknown message tag {tag}")
    mats = []
    offset = FRAME_HEADER.size
    while offset < len(buf):
        m, offset = _unpack_matrix(buf, offset)
        mats.append(m)
    expected = 2 if cls is LossReport else 1
    if len(mats) != expected:
        raise ProtocolError(f"{cls.__name__} carries {len(mats)} matrices, expected {expected}")
    if cls is FeatureBatch:
        return FeatureBatch(dev, rnd, mats[0])
    if cls is ScoreBatch:
        return ScoreBatch(dev, rnd, mats[0][:, 0])
    if cls is LossReport:
        head = mats[0]
        if head.shape != (1, 2):
            raise ProtocolError(f"LossReport header matrix has shape {head.shape}")
        return LossReport(dev, rnd, float(head[0, 0]), int(head[0, 1]), mats[1][:, 0])
    if cls is GlobalLoss:
        return GlobalLoss(dev, rnd, float(mats[0][0, 0]))
    return FeatureGrad(dev, rnd, mats[0])


def frame_size(msg_type: type, b: int, m: int) -> int:
    """Exact encoded size of a message of ``msg_type`` for batch ``b`` and feature dim ``m``."""
    floats = {
        FeatureBatch: [b * m],
        ScoreBatch: [b],
        LossReport: [2, b],
        GlobalLoss: [1],
        FeatureGrad: [b * m],
    }[msg_type]
    return FRAME_HEADER.size + sum(MATRIX_HEADER.size + FLOAT_BYTES * n for n in floats)


@dataclass
class LinkStats:
    bytes_up: int = 0
    bytes_down: int = 0
    feature_payload: int = 0  # f64 bytes of FeatureBatch matrices only


class MessageBus:
    """In-process transport. Every message is encoded and decoded, and counted per device."""

    def __init__(self):
        self.stats: dict[int, LinkStats] = {}
        self._last_round: dict[tuple[int, bool], int] = {}

    def _check_round(self, msg: Message, up: bool) -> None:
        key = (msg.device_id, up)
        last = self._last_round.get(key)
        if last is not None and msg.round < last:
            raise ProtocolError(f"device {msg.device_id}: round went backwards ({last} -> {msg.round})")
        self._last_round[key] = msg.round

    def upload(self, msg: Message) -> Message:
        if not isinstance(msg, UPLINK):
            raise ProtocolError(f"{type(msg).__name__} may not travel device -> cloud")
        self._check_round(msg, True)
        frame = encode(msg)
        st = self.stats.setdefault(msg.device_id, LinkStats())
        st.bytes_up += len(frame)
        if isinstance(msg, FeatureBatch):
            st.feature_payload += msg.features.size * FLOAT_BYTES
        return decode(frame)

    def download(self, msg: Message) -> Message:
        if not isinstance(msg, DOWNLINK):
            raise ProtocolError(f"{type(msg).__name__} may not travel cloud -> device")
        self._check_round(msg, False)
        frame = encode(msg)
        self.stats.setdefault(msg.device_id, LinkStats()).bytes_down += len(frame)
        return decode(frame)

    def snapshot(self) -> dict[int, LinkStats]:
        return {k: LinkStats(v.bytes_up, v.bytes_down, v.feature_payload) for k, v in self.stats.items()}
