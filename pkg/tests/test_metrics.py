import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nativesr import metrics as M
from nativesr.metrics import LossConstants, MetricError
from nativesr.phantoms import smooth_phantom
from nativesr.volume import Volume


def naive_dft_l1(a, b):
    """Direct O(N^2) DFT summation of the difference, mean modulus."""
    d = (a - b).astype(np.complex128)
    n = d.shape
    idx = np.array(list(itertools.product(*[range(k) for k in n])))
    vals = d.ravel()
    total = 0.0
    for w in idx:
        phase = -2j * np.pi * sum(idx[:, ax] * w[ax] / n[ax] for ax in range(3))
        total += abs(np.sum(vals * np.exp(phase)))
    return total / d.size


def loop_laplacian(a):
    nx, ny, nz = a.shape
    out = np.zeros_like(a)
    for i, j, k in itertools.product(range(nx), range(ny), range(nz)):
        s = -6.0 * a[i, j, k]
        for di, dj, dk in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            s += a[min(max(i + di, 0), nx - 1), min(max(j + dj, 0), ny - 1), min(max(k + dk, 0), nz - 1)]
        out[i, j, k] = s
    return out


def test_constants_defaults():
    c = LossConstants()
    assert (c.gamma, c.epsilon, c.lambda_fft, c.lambda_seg) == (1.0, 1e-6, 2e-6, 0.1)
    with pytest.raises(ValueError):
        LossConstants(gamma=-1)
    with pytest.raises(ValueError):
        LossConstants.from_dict({"gama": 1})


def test_laplacian_matches_loops():
    a = np.random.default_rng(0).normal(size=(4, 5, 3))
    assert np.allclose(M.laplacian(a), loop_laplacian(a), atol=1e-12)


def test_edge_map_constant_and_impulse():
    assert np.all(M.edge_weight_map(np.full((5, 5, 5), 2.0)) == 0)
    a = np.zeros((7, 7, 7))
    a[3, 3, 3] = 1.0
    w = M.edge_weight_map(a)
    m = math.log(1 + 6.0)
    assert w[3, 3, 3] == pytest.approx(m / (m + 1e-6), abs=1e-15)
    assert w.max() < 1.0 and w.min() >= 0.0


def test_edge_map_step_edge():
    a = np.zeros((10, 6, 6))
    a[5:] = 1.0
    w = M.edge_weight_map(a)
    assert w[4:6].mean() > w[1:3].mean()
    assert w[7:9].mean() == 0


def test_edge_map_returns_volume():
    v = smooth_phantom((8, 8, 8))
    assert isinstance(M.edge_weight_map(v), Volume)


def test_wmae_examples():
    rng = np.random.default_rng(1)
    y = rng.normal(size=(8, 8, 8))
    assert M.wmae(y, y) == 0.0
    c = np.full((6, 6, 6), 3.0)
    assert M.wmae(c, c + 0.25) == pytest.approx(0.25, abs=1e-12)
    yh = rng.normal(size=(8, 8, 8))
    lap = loop_laplacian(y)
    comp = np.log(1 + np.abs(lap))
    w = comp / (comp.max() + 1e-6)
    oracle = sum((1 + w.flat[i]) * abs(y.flat[i] - yh.flat[i]) for i in range(y.size)) / y.size
    assert M.wmae(y, yh) == pytest.approx(oracle, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 4, 4), elements=st.floats(-10, 10)),
       arrays(np.float64, (4, 4, 4), elements=st.floats(-10, 10)))
def test_wmae_bounds(y, yh):
    mae, w = M.mae(y, yh), M.wmae(y, yh)
    assert mae <= w + 1e-15
    if mae > 0:
        assert w < 2 * mae


def test_spectral_examples():
    rng = np.random.default_rng(2)
    y = rng.normal(size=(4, 4, 4))
    assert M.spectral_loss(y, y) == 0.0
    yh = y.copy()
    yh[1, 2, 3] += 0.7
    assert M.spectral_loss(y, yh) == pytest.approx(0.7, abs=1e-6)
    for _ in range(3):
        a, b = rng.normal(size=(4, 4, 4)), rng.normal(size=(4, 4, 4))
        assert M.spectral_loss(a, b) == pytest.approx(naive_dft_l1(a, b), rel=1e-5)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4, 2), elements=st.floats(-5, 5)),
       arrays(np.float64, (3, 4, 2), elements=st.floats(-5, 5)))
def test_spectral_symmetric_and_zero_iff_equal(a, b):
    assert M.spectral_loss(a, b) == pytest.approx(M.spectral_loss(b, a), rel=1e-12, abs=1e-12)
    if np.array_equal(a, b):
        assert M.spectral_loss(a, b) == 0
    else:
        assert M.spectral_loss(a, b) > 0


def test_shape_mismatch():
    for fn in (M.mae, M.wmae, M.spectral_loss, M.psnr, M.pearson_cc, M.dice):
        with pytest.raises(MetricError):
            fn(np.ones((2, 2, 2)), np.ones((2, 2, 3)))


def test_dice_examples():
    a = np.array([1, 1, 0, 0]).reshape(2, 2, 1)
    b = np.array([1, 0, 0, 0]).reshape(2, 2, 1)
    pc = M.dice(a, b, reduction="per-class")
    assert pc[1] == pytest.approx(2 / 3) and pc[0] == pytest.approx(4 / 5)
    assert M.dice(a, b) == pytest.approx(11 / 15)
    assert M.dice(a, a) == 1.0
    m1 = np.zeros((2, 2, 2))
    m1[0] = 1
    assert M.dice(m1, 1 - m1, classes=[1]) == 0.0
    assert M.dice(a, b, classes=[0, 1, 5], reduction="per-class")[5] == 1.0


@given(arrays(np.int64, (3, 3, 2), elements=st.integers(0, 3)),
       arrays(np.int64, (3, 3, 2), elements=st.integers(0, 3)))
def test_dice_symmetric_in_range(a, b):
    assert M.dice(a, b) == pytest.approx(M.dice(b, a))
    for v in M.dice(a, b, reduction="per-class").values():
        assert 0.0 <= v <= 1.0


def test_composite_loss():
    rng = np.random.default_rng(3)
    y, yh = rng.normal(size=(6, 6, 6)), rng.normal(size=(6, 6, 6))
    sy, syh = rng.integers(0, 3, size=(6, 6, 6)), rng.integers(0, 3, size=(6, 6, 6))
    zero = M.composite_loss(y, y, sy, sy)
    assert zero.total == 0 and zero.wmae == 0 and zero.spectral == 0 and zero.seg == 0
    plain = M.composite_loss(y, yh, sy, syh, LossConstants(lambda_fft=0, lambda_seg=0))
    assert plain.total == M.wmae(y, yh)
    c = LossConstants()
    lb = M.composite_loss(y, yh, sy, syh, c)
    manual = M.wmae(y, yh, c) + c.lambda_fft * M.spectral_loss(y, yh) + c.lambda_seg * (1 - M.dice(sy, syh))
    assert lb.total == pytest.approx(manual, abs=1e-9)
    assert lb.total == lb.wmae + lb.weighted_spectral + lb.weighted_seg
    with pytest.raises(MetricError):
        M.composite_loss(y, yh, sy, None)


def test_psnr_examples():
    rng = np.random.default_rng(4)
    y = rng.uniform(size=(6, 6, 6))
    assert M.psnr(y, y) == math.inf
    y = np.zeros((10, 10, 10))
    y[0, 0, 0] = 1.0
    noise = np.full_like(y, 0.1)
    assert M.psnr(y, y + noise) == pytest.approx(20.0, abs=1e-9)
    a, b = rng.normal(size=(5, 5, 5)), rng.normal(size=(5, 5, 5))
    oracle = 10 * math.log10((a.max() - a.min()) ** 2 / (((a - b) ** 2).sum() / a.size))
    assert M.psnr(a, b) == pytest.approx(oracle, abs=1e-9)
    with pytest.raises(MetricError):
        M.psnr(np.ones((2, 2, 2)), np.zeros((2, 2, 2)))


def test_psnr_monotone_in_noise():
    y = smooth_phantom((16, 16, 16), seed=0).data
    noise = np.random.default_rng(5).normal(size=y.shape)
    values = [M.psnr(y, y + s * noise) for s in np.geomspace(1e-3, 1e-1, 9)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_pearson():
    rng = np.random.default_rng(6)
    y = rng.normal(size=(8, 8, 8))
    assert M.pearson_cc(y, 3.0 * y + 2.0) == pytest.approx(1.0, abs=1e-9)
    assert M.pearson_cc(y, -y) == pytest.approx(-1.0, abs=1e-9)
    yh = rng.normal(size=(8, 8, 8))
    a, b = y.ravel(), yh.ravel()
    n = a.size
    num = n * (a * b).sum() - a.sum() * b.sum()
    den = math.sqrt(n * (a * a).sum() - a.sum() ** 2) * math.sqrt(n * (b * b).sum() - b.sum() ** 2)
    assert M.pearson_cc(y, yh) == pytest.approx(num / den, abs=1e-9)
    assert M.pearson_cc(2 * y + 1, 0.5 * yh - 3) == pytest.approx(M.pearson_cc(y, yh), abs=1e-12)
    with pytest.raises(MetricError):
        M.pearson_cc(np.ones((2, 2, 2)), y[:2, :2, :2])


def test_mean_normalize():
    rng = np.random.default_rng(7)
    ref = rng.uniform(1, 2, size=(5, 5, 5))
    assert np.allclose(M.mean_normalize(2 * ref, ref), ref, atol=1e-12)
    once = M.mean_normalize(rng.uniform(0.5, 3, size=(5, 5, 5)), ref)
    assert once.mean() == pytest.approx(ref.mean(), abs=1e-9)
    assert np.allclose(M.mean_normalize(once, ref), once, atol=1e-9)
    with pytest.raises(MetricError):
        M.mean_normalize(np.zeros((2, 2, 2)), np.ones((2, 2, 2)))
    v = Volume(ref)
    assert isinstance(M.mean_normalize(v.with_data(2 * ref), v), Volume)
