import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedanomaly.dp import (
    ClippedFeatures,
    DpConfig,
    _add_noise_with_sigma,
    add_gaussian_noise,
    clip_rows,
    clip_rows_backward,
    compute_sigma,
    privatize,
    privatize_backward,
)
from fedanomaly.numerics import derive_rng, grad_check

# closed form evaluated independently: sqrt(2 ln 1250)
SIGMA_EPS1 = 3.776479532659047


def test_sigma_closed_form():
    assert compute_sigma(DpConfig(epsilon=1.0, delta=1e-3, clip_norm=1.0)) == pytest.approx(SIGMA_EPS1, abs=1e-9)
    assert math.isclose(SIGMA_EPS1, math.sqrt(2 * math.log(1250)), abs_tol=1e-12)


def test_sigma_shape():
    base = compute_sigma(DpConfig(epsilon=1.0))
    assert compute_sigma(DpConfig(epsilon=1.0, clip_norm=2.0)) == pytest.approx(2 * base, rel=1e-15)
    sig = [compute_sigma(DpConfig(epsilon=e)) for e in (0.5, 1, 2, 8, 100, 1e6)]
    assert all(a > b for a, b in zip(sig, sig[1:])) and 0 < sig[-1] < 1e-5
    sig_c = [compute_sigma(DpConfig(clip_norm=c)) for c in (0.1, 0.5, 1, 2, 10)]
    assert all(a < b for a, b in zip(sig_c, sig_c[1:]))


def test_sigma_rejects_zero_delta():
    with pytest.raises(ValueError):
        compute_sigma(DpConfig(delta=0.0))


def test_config_validation():
    for bad in ({"epsilon": 0}, {"delta": 1.0}, {"clip_norm": 0}, {"sampling_rate": 0}):
        with pytest.raises(ValueError):
            DpConfig(**bad)


def test_clip_examples():
    assert np.array_equal(clip_rows(np.array([[0.3, 0.4]]), 1.0).values, [[0.3, 0.4]])
    assert np.allclose(clip_rows(np.array([[3.0, 4.0]]), 1.0).values, [[0.6, 0.8]], atol=1e-15)


def test_clip_backward_matches_differences(rng):
    x = rng.normal(size=(5, 3)) * np.array([[0.1], [2.0], [0.4], [3.0], [1.5]])
    w = rng.normal(size=(5, 3))

    def f():
        return float((clip_rows(x, 1.0).values * w).sum())

    assert grad_check(f, x, clip_rows_backward(x, 1.0, w), tol=1e-6).passed


def test_noise_type_gate_and_passthrough(rng):
    x = rng.normal(size=(3, 2))
    with pytest.raises(TypeError):
        add_gaussian_noise(x, DpConfig(enabled=True), rng)
    assert privatize(x, DpConfig(enabled=False), rng) is x
    clipped = clip_rows(x, 1.0)
    assert np.array_equal(add_gaussian_noise(clipped, DpConfig(enabled=False), rng), clipped.values)
    assert np.array_equal(_add_noise_with_sigma(clipped.values, 0.0, rng), clipped.values)


def test_noise_std_and_independence():
    z = _add_noise_with_sigma(np.zeros((1000, 1000)), SIGMA_EPS1, derive_rng(0, "noise"))
    assert abs(z.std() / SIGMA_EPS1 - 1) < 0.01
    flat = z.ravel()
    assert abs(np.corrcoef(flat[:-1], flat[1:])[0, 1]) < 0.01


def test_privatize_backward(rng):
    x = rng.normal(size=(4, 3)) * 3
    g = rng.normal(size=(4, 3))
    assert privatize_backward(x, DpConfig(enabled=False), g) is g
    cfg = DpConfig(enabled=True, clip_norm=1.0)
    assert np.array_equal(privatize_backward(x, cfg, g), clip_rows_backward(x, 1.0, g))


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 10))
def test_clipped_norms_bounded(seed, c):
    x = np.random.default_rng(seed).normal(scale=5, size=(8, 4))
    out = clip_rows(x, c)
    assert isinstance(out, ClippedFeatures)
    assert np.all(np.linalg.norm(out.values, axis=1) <= c + 1e-12)
