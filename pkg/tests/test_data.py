import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedanomaly.data import (
    BatchSampler,
    ConfigError,
    DataError,
    Dataset,
    Normalizer,
    Schema,
    WeakSupervisionSplit,
    load_csv,
    make_split,
    make_synthetic,
    shard,
    synthetic_schema,
    write_csv,
)
from fedanomaly.numerics import derive_rng


def counts_dataset(n_normal, n_anomaly, d=3, seed=0):
    rng = np.random.default_rng(seed)
    y = np.r_[np.zeros(n_normal, dtype=np.int64), np.ones(n_anomaly, dtype=np.int64)]
    return Dataset("toy", rng.normal(size=(len(y), d)), y)


# ------------------------------------------------------------------ loading


def test_named_schema_dimensions():
    want = {"nsl-kdd": 122, "spambase": 57, "arrhythmia": 279, "shuttle": 9}
    for name, d in want.items():
        schema = Schema.named(name)
        assert schema.feature_dim == d == schema.expected["dim"]
    assert Schema.named("shuttle").expected["normal"] + Schema.named("shuttle").expected["anomaly"] == 49097
    assert Schema.named("arrhythmia").labeled_anomalies == 15
    assert Schema.named("spambase").labeled_anomalies == 30
    with pytest.raises(ConfigError):
        Schema.named("mnist")


def test_three_row_csv(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text("1,2,0\n3,4,1\n\n5,6,0\n")
    ds = load_csv(path, synthetic_schema(2))
    assert ds.x.tolist() == [[1, 2], [3, 4], [5, 6]] and ds.y.tolist() == [0, 1, 0]


def test_parse_errors_name_line_and_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,2,0\n3,oops,1\n")
    with pytest.raises(DataError, match=r"bad.csv:2: column 1"):
        load_csv(path, synthetic_schema(2))
    path.write_text("1,2,0\n3,1\n")
    with pytest.raises(DataError, match=r"bad.csv:2: expected 3 columns"):
        load_csv(path, synthetic_schema(2))
    with pytest.raises(DataError):
        load_csv(tmp_path / "missing.csv", synthetic_schema(2))


def test_count_and_dim_validation(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text("1,2,0\n")
    schema = synthetic_schema(2)
    schema.expected = {"dim": 2, "normal": 5, "anomaly": 1}
    with pytest.raises(DataError, match="expected 5 / 1"):
        load_csv(path, schema)
    assert load_csv(path, schema, validate_counts=False).n_normal == 1
    schema.expected = {"dim": 3}
    with pytest.raises(DataError, match="dimension"):
        load_csv(path, schema)


def test_whitespace_drop_and_missing(tmp_path):
    schema = Schema("s", 3, 2, delimiter="whitespace", normal_labels=["1"], drop_labels=["4"], missing="?")
    path = tmp_path / "s.tst"
    path.write_text("1   2 1\n3 ? 4\n5  ?  2\n")
    ds = load_csv(path, schema)
    assert ds.y.tolist() == [0, 1] and np.isnan(ds.x[1, 1])


def test_one_hot_and_ignored_columns(tmp_path):
    schema = Schema("k", 4, 2, normal_labels=["normal"], ignore_columns=[3], categorical={"1": ["tcp", "udp", "icmp"]})
    path = tmp_path / "k.csv"
    path.write_text("0.5,udp,normal,21\n2,icmp,smurf,3\n")
    ds = load_csv(path, schema)
    assert ds.x.tolist() == [[0.5, 0, 1, 0], [2, 0, 0, 1]] and ds.y.tolist() == [0, 1]
    path.write_text("0.5,sctp,normal,21\n")
    with pytest.raises(DataError, match="unknown category"):
        load_csv(path, schema)


def test_csv_round_trip(tmp_path):
    ds = make_synthetic(d=4, n_normal=30, n_anomaly=5, seed=2)
    write_csv(ds, tmp_path / "s.csv")
    back = load_csv(tmp_path / "s.csv", synthetic_schema(4))
    assert np.array_equal(back.x, ds.x) and np.array_equal(back.y, ds.y)


def test_synthetic_generator():
    ds = make_synthetic(d=20, n_normal=500, n_anomaly=40, seed=1, outlier_fraction=0.25)
    assert ds.x.shape == (540, 20) and ds.n_anomaly == 40
    assert np.array_equal(ds.x, make_synthetic(d=20, n_normal=500, n_anomaly=40, seed=1, outlier_fraction=0.25).x)


# -------------------------------------------------------------------- split


def test_spambase_split_arithmetic():
    ds = counts_dataset(2788, 1813)
    sp = make_split(ds, seed=0)
    assert len(sp.train_labeled) == 30
    assert len(sp.noise) == 2230 * 2 // 100 == 44
    assert len(sp.train_unlabeled) == 2230 + 44
    assert (ds.y[sp.noise] == 1).all() and (ds.y[sp.train_labeled] == 1).all()
    test_y = ds.y[sp.test]
    assert (test_y == 0).sum() == 558 and (test_y == 1).sum() == 1813 - 30 - 44


def test_split_reproducible_disjoint_and_serialisable():
    ds = counts_dataset(300, 60)
    a, b = make_split(ds, 5), make_split(ds, 5)
    for k in ("train_unlabeled", "train_labeled", "test", "noise"):
        assert np.array_equal(getattr(a, k), getattr(b, k))
    assert not set(a.train) & set(a.test)
    assert sorted(np.r_[a.train, a.test]) == list(range(360))
    c = WeakSupervisionSplit.from_json(a.to_json())
    assert np.array_equal(c.test, a.test) and c.seed == 5


def test_split_needs_enough_anomalies():
    with pytest.raises(ConfigError):
        make_split(counts_dataset(300, 30), 0)


# -------------------------------------------------------------------- shards


@pytest.mark.parametrize("k", [1, 3, 6, 10])
@pytest.mark.parametrize("skew", [None, 0.3])
def test_shards_disjoint_and_exhaustive(k, skew):
    sp = make_split(counts_dataset(1000, 80), 1)
    shards = shard(sp, k, seed=1, label_skew=skew)
    assert len(shards) == k
    for pool, attr in ((sp.train_unlabeled, "unlabeled"), (sp.train_labeled, "labeled"), (sp.test, "test")):
        parts = [getattr(s, attr) for s in shards]
        joined = np.concatenate(parts)
        assert sorted(joined) == sorted(pool) and len(set(joined)) == len(joined)
        assert all(len(p) >= 1 for p in parts)


def test_equal_labelled_shards_and_k1():
    sp = make_split(counts_dataset(1000, 80), 1)
    assert [len(s.labeled) for s in shard(sp, 3, 0)] == [10, 10, 10]
    (one,) = shard(sp, 1, 0)
    assert np.array_equal(np.sort(one.unlabeled), sp.train_unlabeled) and one.n_train == len(sp.train)
    with pytest.raises(ConfigError):
        shard(sp, 31, 0)


# ------------------------------------------------------------------- sampler


def test_batches_half_labelled_and_noise_stays_zero():
    ds = counts_dataset(400, 60)
    sp = make_split(ds, 0)
    x = np.arange(len(ds.y), dtype=np.float64)[:, None]  # row value = its index
    sampler = BatchSampler(x, sp.train_unlabeled, sp.train_labeled, 32, derive_rng(0, "sample"))
    noise = set(sp.noise.tolist())
    seen_noise = False
    for _ in range(40):
        xb, yb = sampler.next_batch()
        assert yb.sum() == 16
        for idx, label in zip(xb[:, 0].astype(int), yb):
            if idx in noise:
                seen_noise = True
                assert label == 0
    assert seen_noise


def test_sampler_reproducible_and_rejects_odd():
    x = np.arange(50.0)[:, None]

    def draw():
        s = BatchSampler(x, np.arange(40), np.arange(40, 50), 8, derive_rng(3, "sample"))
        return [s.next_batch()[0].tolist() for _ in range(10)]

    assert draw() == draw()
    with pytest.raises(ConfigError):
        BatchSampler(x, np.arange(40), np.arange(40, 50), 7, derive_rng(3, "sample"))


def test_unlabelled_rows_cycle_without_replacement():
    x = np.arange(12.0)[:, None]
    s = BatchSampler(x, np.arange(10), np.arange(10, 12), 4, derive_rng(0, "sample"))
    first_epoch = []
    for _ in range(5):
        xb, yb = s.next_batch()
        first_epoch += xb[yb == 0, 0].tolist()
    assert sorted(first_epoch) == list(range(10))


# ----------------------------------------------------------- normalisation


@given(st.integers(0, 2**32 - 1))
def test_normaliser_uses_train_rows_only(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(40, 3))
    x[rng.random(x.shape) < 0.1] = np.nan
    train = np.arange(30)
    norm = Normalizer.fit(x[train])
    poisoned = x.copy()
    poisoned[30:] = 1e6
    again = Normalizer.fit(poisoned[train])
    for k in ("fill", "lo", "span"):
        assert np.array_equal(getattr(norm, k), getattr(again, k))
    out = norm.transform(x[train])
    assert np.all(out >= -1e-12) and np.all(out <= 1 + 1e-12)


def test_constant_column_and_all_missing():
    x = np.array([[1.0, np.nan], [1.0, np.nan]])
    out = Normalizer.fit(x).transform(x)
    assert np.array_equal(out, np.zeros((2, 2)))
