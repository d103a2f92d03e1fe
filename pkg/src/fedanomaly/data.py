"""Dataset loading, weak-supervision splits, device sharding and batch sampling."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SCHEMA_DIR = Path(__file__).parent / "schemas"


class DataError(ValueError):
    """Malformed input file or schema mismatch."""


class ConfigError(ValueError):
    """Impossible split/shard/config request."""


# --------------------------------------------------------------------- schema


@dataclass
class Schema:
    name: str
    n_columns: int
    label_column: int
    delimiter: str = ","  # "whitespace" splits on runs of blanks
    has_header: bool = False
    normal_labels: list[str] | None = None
    positive_labels: list[str] | None = None
    drop_labels: list[str] = field(default_factory=list)
    ignore_columns: list[int] = field(default_factory=list)
    categorical: dict[str, list[str]] = field(default_factory=dict)  # column index -> categories
    missing: str | None = None
    expected: dict[str, int] | None = None  # {"dim", "normal", "anomaly"}
    default_heads: int | None = None
    labeled_anomalies: int = 30
    files: list[str] = field(default_factory=list)  # canonical file names of the public release

    @classmethod
    def from_json(cls, path) -> "Schema":
        with open(path) as fh:
            raw = json.load(fh)
        raw.pop("notes", None)
        return cls(**raw)

    @classmethod
    def named(cls, name: str) -> "Schema":
        path = SCHEMA_DIR / f"{name.lower()}.json"
        if not path.exists():
            known = sorted(p.stem for p in SCHEMA_DIR.glob("*.json"))
            raise ConfigError(f"no bundled schema {name!r}; known: {known}")
        return cls.from_json(path)

    @property
    def feature_dim(self) -> int:
        skip = set(self.ignore_columns) | {self.label_column}
        dim = 0
        for col in range(self.n_columns):
            if col in skip:
                continue
            cats = self.categorical.get(str(col))
            dim += len(cats) if cats else 1
        return dim

    def is_anomaly(self, label: str) -> bool:
        if self.normal_labels is not None:
            return label not in self.normal_labels
        if self.positive_labels is not None:
            return label in self.positive_labels
        raise DataError(f"schema {self.name} declares neither normal_labels nor positive_labels")


def locate_files(schema: Schema, data_dir: str | Path) -> list[Path]:
    """Paths of the schema's canonical files under ``data_dir`` (or ``data_dir/<name>``)."""
    base = Path(data_dir)
    for root in (base / schema.name, base):
        paths = [root / f for f in schema.files]
        if schema.files and all(p.exists() for p in paths):
            return paths
    raise DataError(f"{schema.name}: expected files {schema.files} in {base} or {base / schema.name}")


@dataclass
class Dataset:
    name: str
    x: np.ndarray  # (n, d), NaN marks missing
    y: np.ndarray  # (n,), 1 = anomaly

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n_normal(self) -> int:
        return int((self.y == 0).sum())

    @property
    def n_anomaly(self) -> int:
        return int((self.y == 1).sum())


def _split_line(line: str, delimiter: str) -> list[str]:
    if delimiter == "whitespace":
        return line.split()
    return next(csv.reader([line], delimiter=delimiter))


def load_csv(paths: str | Path | Sequence[str | Path], schema: Schema, validate_counts: bool = True) -> Dataset:
    """Parse one or more delimited files into a :class:`Dataset`.

    Categorical columns are one-hot expanded in the schema's category order.
    Rows whose label is in ``drop_labels`` are skipped.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    skip = set(schema.ignore_columns) | {schema.label_column}
    rows: list[list[float]] = []
    labels: list[int] = []
    for path in paths:
        path = Path(path)
        if not path.exists():
            raise DataError(f"{path}: no such file")
        with open(path, newline="") as fh:
            for lineno, line in enumerate(fh, start=1):
                if schema.has_header and lineno == 1:
                    continue
                if not line.strip():
                    continue
                cells = [c.strip() for c in _split_line(line.rstrip("\r\n"), schema.delimiter)]
                if len(cells) != schema.n_columns:
                    raise DataError(f"{path}:{lineno}: expected {schema.n_columns} columns, got {len(cells)}")
                label = cells[schema.label_column]
                if label in schema.drop_labels:
                    continue
                vec: list[float] = []
                for col, cell in enumerate(cells):
                    if col in skip:
                        continue
                    cats = schema.categorical.get(str(col))
                    if cats:
                        if cell not in cats:
                            raise DataError(f"{path}:{lineno}: column {col} has unknown category {cell!r}")
                        onehot = [0.0] * len(cats)
                        onehot[cats.index(cell)] = 1.0
                        vec.extend(onehot)
                    elif schema.missing is not None and cell == schema.missing:
                        vec.append(math.nan)
                    else:
                        try:
                            vec.append(float(cell))
                        except ValueError:
                            raise DataError(f"{path}:{lineno}: column {col} is not numeric: {cell!r}") from None
                rows.append(vec)
                labels.append(1 if schema.is_anomaly(label) else 0)
    x = np.array(rows, dtype=np.float64).reshape(len(rows), schema.feature_dim)
    ds = Dataset(schema.name, x, np.array(labels, dtype=np.int64))
    exp = schema.expected or {}
    if "dim" in exp and ds.d != exp["dim"]:
        raise DataError(f"{schema.name}: dimension {ds.d} != expected {exp['dim']}")
    if validate_counts and "normal" in exp and (ds.n_normal, ds.n_anomaly) != (exp["normal"], exp["anomaly"]):
        raise DataError(
            f"{schema.name}: loaded {ds.n_normal} normal / {ds.n_anomaly} anomalous rows, "
            f"expected {exp['normal']} / {exp['anomaly']}"
        )
    return ds


def write_csv(ds: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row, label in zip(ds.x, ds.y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def synthetic_schema(d: int, name: str = "synthetic") -> Schema:
    return Schema(name=name, n_columns=d + 1, label_column=d, positive_labels=["1"])


# ------------------------------------------------------------------ synthetic


def make_synthetic(
    d: int = 20,
    n_normal: int = 5000,
    n_anomaly: int = 200,
    seed: int = 0,
    separation: float = 6.0,
    outlier_fraction: float = 0.0,
    box: float = 6.0,
) -> Dataset:
    """Two Gaussian clusters plus uniform outliers.

    Normals ~ N(0, I). A fraction ``1 - outlier_fraction`` of the anomalies
    form a second unit-variance cluster whose centre lies ``separation`` away
    in a random direction; the rest are uniform in ``[-box, box]^d``.
    """
    from .numerics import derive_rng

    rng = derive_rng(seed, "synth")
    normals = rng.normal(size=(n_normal, d))
    direction = rng.normal(size=d)
    direction /= np.linalg.norm(direction)
    n_out = int(round(outlier_fraction * n_anomaly))
    cluster = rng.normal(size=(n_anomaly - n_out, d)) + separation * direction
    outliers = rng.uniform(-box, box, size=(n_out, d))
    x = np.vstack([normals, cluster, outliers])
    y = np.r_[np.zeros(n_normal, dtype=np.int64), np.ones(n_anomaly, dtype=np.int64)]
    order = rng.permutation(len(y))
    return Dataset("synthetic", x[order], y[order])


# ---------------------------------------------------------------------- split


@dataclass
class WeakSupervisionSplit:
    seed: int
    train_unlabeled: np.ndarray  # normals plus hidden anomalies, all trained as label 0
    train_labeled: np.ndarray  # labelled anomalies
    test: np.ndarray
    noise: np.ndarray  # subset of train_unlabeled that is truly anomalous

    def to_json(self) -> dict:
        return {
            "version": 1,
            "seed": self.seed,
            "train_unlabeled": self.train_unlabeled.tolist(),
            "train_labeled": self.train_labeled.tolist(),
            "test": self.test.tolist(),
            "noise": self.noise.tolist(),
        }

    @classmethod
    def from_json(cls, raw: dict) -> "WeakSupervisionSplit":
        return cls(
            raw["seed"],
            *(np.asarray(raw[k], dtype=np.int64) for k in ("train_unlabeled", "train_labeled", "test", "noise")),
        )

    @property
    def train(self) -> np.ndarray:
        return np.concatenate([self.train_unlabeled, self.train_labeled])


def make_split(
    ds: Dataset,
    seed: int,
    n_labeled: int = 30,
    noise_fraction: float = 0.02,
    train_normal_fraction: float = 0.8,
) -> WeakSupervisionSplit:
    """Weakly supervised partition.

    ``floor(train_normal_fraction * n_normal)`` normals go to training and are
    joined by ``floor(noise_fraction * that count)`` unlabeled anomalies;
    ``n_labeled`` further anomalies are labelled; everything else is test.
    """
    from .numerics import derive_rng

    rng = derive_rng(seed, "split")
    normals = np.flatnonzero(ds.y == 0)
    anomalies = np.flatnonzero(ds.y == 1)
    n_train_normal = int(math.floor(train_normal_fraction * len(normals)))
    n_noise = int(math.floor(noise_fraction * n_train_normal))
    if n_labeled + n_noise + 1 > len(anomalies):
        raise ConfigError(
            f"{ds.name}: need {n_labeled} labelled + {n_noise} noise + >=1 test anomalies, "
            f"dataset has {len(anomalies)}"
        )
    if n_train_normal < 1 or n_train_normal == len(normals):
        raise ConfigError(f"{ds.name}: cannot split {len(normals)} normals at fraction {train_normal_fraction}")
    normals = rng.permutation(normals)
    anomalies = rng.permutation(anomalies)
    labeled = np.sort(anomalies[:n_labeled])
    noise = np.sort(anomalies[n_labeled:n_labeled + n_noise])
    unlabeled = np.sort(np.concatenate([normals[:n_train_normal], noise]))
    test = np.sort(np.concatenate([normals[n_train_normal:], anomalies[n_labeled + n_noise:]]))
    return WeakSupervisionSplit(seed, unlabeled, labeled, test, noise)


# ----------------------------------------------------------- normalisation


@dataclass
class Normalizer:
    """Per-column min-max scaling with train-mean imputation of missing values."""

    fill: np.ndarray
    lo: np.ndarray
    span: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Normalizer":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-missing columns fall back to 0
            fill = np.nanmean(x, axis=0) if np.isnan(x).any() else x.mean(axis=0)
        fill = np.where(np.isfinite(fill), fill, 0.0)
        filled = np.where(np.isnan(x), fill, x)
        lo = filled.min(axis=0)
        span = filled.max(axis=0) - lo
        span = np.where(span > 0, span, 1.0)
        return cls(fill, lo, span)

    def transform(self, x: np.ndarray) -> np.ndarray:
        filled = np.where(np.isnan(x), self.fill, x)
        return (filled - self.lo) / self.span


# ---------------------------------------------------------------------- shard


@dataclass
class DeviceShard:
    device_id: int
    unlabeled: np.ndarray
    labeled: np.ndarray
    test: np.ndarray

    @property
    def n_train(self) -> int:
        return len(self.unlabeled) + len(self.labeled)


def _equal_parts(idx: np.ndarray, k: int) -> list[np.ndarray]:
    return [np.sort(p) for p in np.array_split(idx, k)]


def _dirichlet_parts(idx: np.ndarray, k: int, alpha: float, rng) -> list[np.ndarray]:
    # every device keeps at least one element; the rest follows Dirichlet proportions
    props = rng.dirichlet(np.full(k, alpha))
    extra = len(idx) - k
    counts = np.floor(props * extra).astype(int)
    for i in np.argsort(-(props * extra - counts))[: extra - counts.sum()]:
        counts[i] += 1
    bounds = np.cumsum(np.r_[0, counts + 1])
    return [np.sort(idx[bounds[i]:bounds[i + 1]]) for i in range(k)]


def shard(split: WeakSupervisionSplit, k: int, seed: int, label_skew: float | None = None) -> list[DeviceShard]:
    """Split each training pool and the test set into ``k`` disjoint device shards.

    With ``label_skew=None`` (default) the pools are shuffled and cut into
    near-equal parts. A positive ``label_skew`` draws per-pool Dirichlet
    proportions with that concentration instead.
    """
    from .numerics import derive_rng

    if k < 1:
        raise ConfigError("need at least one device")
    for name, pool in (("unlabeled", split.train_unlabeled), ("labeled", split.train_labeled), ("test", split.test)):
        if k > len(pool):
            raise ConfigError(f"{k} devices but only {len(pool)} {name} samples")
    rng = derive_rng(seed, "shard")
    pools = []
    for pool in (split.train_unlabeled, split.train_labeled, split.test):
        shuffled = rng.permutation(pool)
        if label_skew is None:
            pools.append(_equal_parts(shuffled, k))
        else:
            pools.append(_dirichlet_parts(shuffled, k, label_skew, rng))
    return [DeviceShard(i, pools[0][i], pools[1][i], pools[2][i]) for i in range(k)]


# -------------------------------------------------------------------- sampler


class BatchSampler:
    """Half unlabeled (label 0), half labelled anomalies (label 1) per batch.

    Unlabeled rows are drawn without replacement from a reshuffled epoch
    order; labelled anomalies are drawn with replacement.
    """

    def __init__(self, x: np.ndarray, unlabeled: np.ndarray, labeled: np.ndarray, batch_size: int, rng):
        if batch_size % 2:
            raise ConfigError(f"batch size must be even, got {batch_size}")
        if len(unlabeled) == 0 or len(labeled) == 0:
            raise ConfigError("batch sampler needs non-empty unlabeled and labelled pools")
        self.x = x
        self.unlabeled = np.asarray(unlabeled)
        self.labeled = np.asarray(labeled)
        self.batch_size = batch_size
        self.rng = rng
        self._order = self.rng.permutation(self.unlabeled)
        self._pos = 0

    def _take_unlabeled(self, n: int) -> np.ndarray:
        out = []
        while n:
            if self._pos == len(self._order):
                self._order = self.rng.permutation(self.unlabeled)
                self._pos = 0
            take = min(n, len(self._order) - self._pos)
            out.append(self._order[self._pos:self._pos + take])
            self._pos += take
            n -= take
        return np.concatenate(out)

    def next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        half = self.batch_size // 2
        idx = np.concatenate([self._take_unlabeled(half), self.rng.choice(self.labeled, size=half, replace=True)])
        labels = np.r_[np.zeros(half), np.ones(half)]
        perm = self.rng.permutation(self.batch_size)
        return self.x[idx[perm]], labels[perm]


def manifest(split: WeakSupervisionSplit, shards: list[DeviceShard], dataset: str, **extra) -> dict:
    return {
        **split.to_json(),
        "dataset": dataset,
        "shards": [
            {"device_id": s.device_id, "unlabeled": s.unlabeled.tolist(), "labeled": s.labeled.tolist(), "test": s.test.tolist()}
            for s in shards
        ],
        **extra,
    }


def schema_dict(schema: Schema) -> dict:
    return asdict(schema)
