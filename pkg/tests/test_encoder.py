import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedanomaly.centralized import check_gradients
from fedanomaly.config import DATASET_DIMS, DATASET_HEADS
from fedanomaly.encoder import (
    FeatureLearner,
    encoder_backward,
    encoder_forward,
    multi_head_attention,
    positional_encoding,
)
from fedanomaly.numerics import ShapeError, TapeError, derive_rng


def learner(d=6, heads=2, m=3, seed=0, **kw):
    return FeatureLearner.init(d, heads, m, derive_rng(seed, "init"), **kw)


def reference_forward(x, lr):
    """Loop-per-token reimplementation, sharing no code with the encoder module."""
    p, d, h, eps = lr.params, lr.d, lr.n_heads, lr.ln_eps
    dh = d // h
    seqs = [x] if lr.batch_as_sequence else [row[None, :] for row in x]

    def norm(v, g, b):
        mu = sum(v) / len(v)
        var = sum((t - mu) ** 2 for t in v) / len(v)
        return np.array([(t - mu) / math.sqrt(var + eps) for t in v]) * g[0] + b[0]

    out = []
    for seq in seqs:
        length = seq.shape[0]
        toks = []
        for pos in range(length):
            pe = np.array([
                math.sin(pos / 10000 ** (j / d)) if j % 2 == 0 else math.cos(pos / 10000 ** ((j - 1) / d))
                for j in range(d)
            ])
            toks.append(seq[pos] + pe)
        for t in range(length):
            heads = []
            for i in range(h):
                cols = slice(i * dh, (i + 1) * dh)
                q = toks[t] @ p["w_q"][:, cols]
                logits = [q @ (toks[s] @ p["w_k"][:, cols]) / math.sqrt(dh) for s in range(length)]
                top = max(logits)
                w = [math.exp(z - top) for z in logits]
                heads.append(sum(w[s] / sum(w) * (toks[s] @ p["w_v"][:, cols]) for s in range(length)))
            n1 = norm(toks[t] + np.concatenate(heads) @ p["w_o"], p["ln1_g"], p["ln1_b"])
            ff = np.maximum(n1 @ p["w_ff1"] + p["b_ff1"][0], 0) @ p["w_ff2"] + p["b_ff2"][0]
            n2 = norm(n1 + ff, p["ln2_g"], p["ln2_b"])
            out.append(n2 @ p["w_c"] + p["b_c"][0])
    return np.array(out)


def test_positional_encoding_values():
    pe = positional_encoding(3, 6)
    assert pe.shape == (3, 6)
    assert np.array_equal(pe[0, 0::2], np.zeros(3)) and np.array_equal(pe[0, 1::2], np.ones(3))
    assert pe[1, 0] == pytest.approx(0.84147098, abs=1e-8)
    assert positional_encoding(5, 7).shape == (5, 7)


@pytest.mark.parametrize("as_seq", [False, True])
def test_forward_matches_reference(as_seq, rng):
    lr = learner(d=6, heads=3, m=4, seed=3, batch_as_sequence=as_seq)
    for k in ("ln1_g", "ln1_b", "b_ff1", "ln2_b", "b_c"):
        lr.params[k] = lr.params[k] + rng.normal(scale=0.3, size=lr.params[k].shape)
    x = rng.random((4, 6))
    h, _ = encoder_forward(x, lr)
    assert np.max(np.abs(h - reference_forward(x, lr))) <= 1e-12


def test_single_token_attention_returns_values():
    lr = learner(d=6, heads=2, m=3)
    x0 = np.random.default_rng(0).normal(size=(5, 1, 6))
    out, _, _, v, weights, concat = multi_head_attention(x0, lr)
    assert np.array_equal(weights, np.ones_like(weights))
    assert np.allclose(concat, x0 @ lr.params["w_v"], atol=1e-15)
    assert np.allclose(out, concat @ lr.params["w_o"], atol=1e-15)
    lr.params["w_v"][:] = 0
    assert not multi_head_attention(x0, lr)[0].any()


def test_two_token_hand_attention():
    lr = learner(d=2, heads=1, m=1, batch_as_sequence=True)
    for k in ("w_q", "w_k", "w_v", "w_o"):
        lr.params[k] = np.eye(2)
    s1, c1 = math.sin(1), math.cos(1)
    x0 = np.array([[[0.0, 1.0], [s1, c1]]])
    # token 0 scores: [1, c1] / sqrt 2 ; token 1 scores: [c1, 1] / sqrt 2
    a = math.exp(1 / math.sqrt(2)) / (math.exp(1 / math.sqrt(2)) + math.exp(c1 / math.sqrt(2)))
    want = np.array([[a * 0 + (1 - a) * s1, a * 1 + (1 - a) * c1], [(1 - a) * 0 + a * s1, (1 - a) * 1 + a * c1]])
    out = multi_head_attention(x0, lr)[0][0]
    assert np.allclose(out, want, atol=1e-14)


def test_zero_compression_gives_bias():
    lr = learner()
    lr.params["w_c"][:] = 0
    lr.params["b_c"] = np.array([[0.1, 0.2, 0.3]])
    h, _ = encoder_forward(np.random.default_rng(1).random((4, 6)), lr)
    assert np.array_equal(h, np.tile([[0.1, 0.2, 0.3]], (4, 1)))


def test_identical_rows_identical_features():
    h, _ = encoder_forward(np.tile(np.arange(6.0), (3, 1)), learner())
    assert np.array_equal(h[0], h[1]) and np.array_equal(h[1], h[2])


def test_forward_errors():
    lr = learner()
    with pytest.raises(ShapeError):
        encoder_forward(np.zeros((2, 5)), lr)
    with pytest.raises(ValueError):
        encoder_forward(np.full((2, 6), np.nan), lr)
    with pytest.raises(ValueError):
        learner(d=6, heads=4)


def test_backward_zero_and_linear(rng):
    lr = learner()
    x = rng.random((4, 6))
    _, tape = encoder_forward(x, lr)
    zero = encoder_backward(tape, np.zeros((4, 3)), lr)
    assert all(not g.any() for g in zero.values())
    g = rng.normal(size=(4, 3))
    one, two = encoder_backward(tape, g, lr), encoder_backward(tape, 2 * g, lr)
    for k in one:
        assert np.allclose(two[k], 2 * one[k], rtol=1e-12, atol=1e-15)


def test_stale_tape_rejected(rng):
    lr = learner()
    _, tape = encoder_forward(rng.random((2, 6)), lr)
    lr.bump()
    with pytest.raises(TapeError):
        encoder_backward(tape, np.zeros((2, 3)), lr)


@pytest.mark.parametrize("as_seq", [False, True])
def test_gradients_pass_finite_differences(as_seq):
    reports = check_gradients(11, batch_as_sequence=as_seq)
    bad = [(r.name, r.max_rel_error) for r in reports if not r.passed]
    assert not bad


def test_dataset_head_counts_divide_dims():
    for name, heads in DATASET_HEADS.items():
        assert DATASET_DIMS[name] % heads == 0


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_output_has_m_columns(seed, m):
    lr = learner(d=6, heads=2, m=m, seed=seed)
    assert encoder_forward(np.random.default_rng(seed).random((3, 6)), lr)[0].shape == (3, m)


@given(st.integers(0, 2**32 - 1))
def test_batch_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    lr = learner(seed=seed)
    x = rng.random((5, 6))
    perm = rng.permutation(5)
    assert np.allclose(encoder_forward(x[perm], lr)[0], encoder_forward(x, lr)[0][perm], atol=1e-14, rtol=0)
