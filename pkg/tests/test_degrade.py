import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nativesr.degrade import (
    DegradationSpec,
    Histogram,
    InfeasibleError,
    Pattern,
    ProtocolDistribution,
    TrainingPairStream,
    clip_triplet,
    default_protocol,
    degrade_volume,
    derive_seed,
    generate_triplet,
    load_protocol,
    make_training_pair,
    sample_cell_spec,
    sample_protocol,
    validate_triplet,
)
from nativesr.phantoms import checkerboard, smooth_phantom
from nativesr.routing import BinCoord, classify, feasible_cells
from nativesr.volume import Volume, VolumeError, descriptors


def block_then_linear(gt: np.ndarray, k: int, axis: int) -> np.ndarray:
    """Independent oracle: k-block means along one axis, then linear interpolation back."""
    moved = np.moveaxis(gt, axis, 0)
    n = moved.shape[0]
    low = moved.reshape(n // k, k, *moved.shape[1:]).mean(axis=1)
    pos = np.clip((np.arange(n) + 0.5) / k - 0.5, 0, low.shape[0] - 1)
    i0 = np.minimum(np.floor(pos).astype(int), max(low.shape[0] - 2, 0))
    f = (pos - i0).reshape(-1, *([1] * (moved.ndim - 1)))
    i1 = np.minimum(i0 + 1, low.shape[0] - 1)
    return np.moveaxis((1 - f) * low[i0] + f * low[i1], 0, axis)


# -- generator ---------------------------------------------------------------


def test_generator_a1_example():
    t = generate_triplet(5.0, 1, np.random.default_rng(0))
    assert sorted(t) == [1.0, 1.0, 5.0]


def test_generator_low_volume_a3():
    t = generate_triplet(1.2, 3, np.random.default_rng(0))
    validate_triplet(t, 1.2, 3)
    assert np.prod(t) == pytest.approx(1.2, rel=1e-6)


def test_generator_infeasible():
    with pytest.raises(InfeasibleError):
        generate_triplet(1.2, 1, np.random.default_rng(0))
    with pytest.raises(InfeasibleError):
        generate_triplet(0.5, 3, np.random.default_rng(0))


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0, 12.0), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_generator_constraints(volume, a_bin, seed):
    rng = np.random.default_rng(seed)
    try:
        t = generate_triplet(volume, a_bin, rng)
    except InfeasibleError:
        # only allowed where the long side cannot stretch far enough
        assert 1.0 / volume >= (0.33, 0.66, 1.0)[a_bin - 1] - 1e-12
        return
    assert np.prod(t) == pytest.approx(volume, rel=1e-6)
    assert min(t) >= 1.0
    assert len({round(x, 12) for x in t}) <= 2
    lo, hi = (0.0, 0.33, 0.66, 1.0)[a_bin - 1: a_bin + 1]
    a = min(t) / max(t)
    assert lo < a <= hi


@pytest.mark.parametrize("a_bin", [1, 2])
def test_permutation_coverage(a_bin):
    rng = np.random.default_rng(11)
    odd_axes = set()
    for _ in range(1000):
        t = generate_triplet(6.0, a_bin, rng)
        vals = np.array(t)
        counts = [np.sum(np.isclose(vals, x)) for x in vals]
        odd_axes.add(int(np.argmin(counts)))
    assert odd_axes == {0, 1, 2}


def test_generator_deterministic():
    a = [generate_triplet(4.0, 2, np.random.default_rng(7)) for _ in range(2)]
    assert a[0] == a[1]


@given(st.lists(st.floats(0.01, 20.0), min_size=3, max_size=3))
def test_clipping(r):
    c = clip_triplet(r)
    assert min(c) >= 1.0
    for x, y in zip(r, c):
        if x >= 1.0:
            assert x == y


def test_sample_cell_spec_lands_in_cell():
    for cell in feasible_cells():
        for seed in range(5):
            spec = sample_cell_spec(cell, seed)
            assert classify(descriptors(spec.triplet)) == cell
            assert spec.cell == cell


def test_sample_cell_spec_rejects_infeasible():
    with pytest.raises(InfeasibleError):
        sample_cell_spec(BinCoord(1, 1), 0)


def test_derive_seed_stable():
    assert derive_seed(0, "s01", BinCoord(5, 1), 2) == derive_seed(0, "s01", BinCoord(5, 1), 2)
    assert derive_seed(0, "s01", 1) != derive_seed(0, "s01", 2)


# -- protocol sampler ----------------------------------------------------------


def test_degenerate_axial_distribution():
    base = default_protocol("volbrain")
    dist = ProtocolDistribution({Pattern.AXIAL: 1.0}, base.volume_histogram,
                                base.anisotropy_histogram, "axial-only")
    rng = np.random.default_rng(0)
    for _ in range(200):
        t = sample_protocol(dist, rng)
        assert t[0] == t[1]
        assert t[2] != t[0]


def test_protocol_deterministic():
    dist = default_protocol("volbrain")
    a = [sample_protocol(dist, np.random.default_rng(3)) for _ in range(2)]
    assert a[0] == a[1]


def test_default_protocols_load():
    vb = default_protocol("volbrain")
    assert vb.pattern_weights[Pattern.ISOTROPIC] == pytest.approx(154831 / 264265)
    bb = default_protocol("biobank")
    assert sum(bb.pattern_weights.values()) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        default_protocol("nope")


def test_protocol_file_roundtrip(tmp_path):
    dist = default_protocol("volbrain")
    (tmp_path / "p.json").write_text(json.dumps(dist.to_dict()))
    again = load_protocol(tmp_path / "p.json")
    assert again.pattern_weights == dist.pattern_weights


def test_protocol_rejects_bad_input(tmp_path):
    with pytest.raises(ValueError):
        Histogram((1.0, 2.0), ())
    with pytest.raises(ValueError):
        Histogram((1.0, 2.0), (0.0,))
    d = default_protocol("volbrain").to_dict()
    d["bogus"] = 1
    (tmp_path / "p.json").write_text(json.dumps(d))
    with pytest.raises(ValueError):
        load_protocol(tmp_path / "p.json")


# -- degradation ----------------------------------------------------------------


def test_identity_degradation():
    gt = smooth_phantom((16, 16, 16), seed=1)
    out = degrade_volume(gt, (1.0, 1.0, 1.0))
    assert np.max(np.abs(out.data - gt.data)) < 1e-6


def test_checkerboard_two_step_oracle():
    gt = checkerboard((8, 8, 8))
    out = degrade_volume(gt, (1.0, 1.0, 2.0))
    assert np.allclose(out.data, block_then_linear(gt.data, 2, 2), atol=1e-12)


@pytest.mark.parametrize("k", [2, 3])
def test_isotropic_integer_oracle(k):
    gt = smooth_phantom((12, 12, 12), seed=k)
    out = degrade_volume(gt, (float(k),) * 3)
    expect = gt.data
    for axis in range(3):
        expect = block_then_linear(expect, k, axis)
    assert np.allclose(out.data, expect, atol=1e-12)


def test_contract_shape_and_geometry():
    gt = Volume(np.random.default_rng(0).normal(size=(9, 10, 11)), (1, 1, 1), np.eye(3), (4.0, 5.0, 6.0))
    out = degrade_volume(gt, (1.3, 2.7, 1.0))
    assert out.shape == gt.shape and out.spacing == gt.spacing
    assert out.same_geometry(gt)


def test_contrast_covariance():
    gt = smooth_phantom((16, 16, 16), seed=4)
    spec = (1.4, 1.4, 3.3)
    a, b = 2.5, -0.7
    lhs = degrade_volume(gt.with_data(a * gt.data + b), spec).data
    rhs = a * degrade_volume(gt, spec).data + b
    assert np.max(np.abs(lhs - rhs)) < 1e-5


def test_degrade_errors():
    with pytest.raises(VolumeError):
        degrade_volume(Volume(np.zeros((4, 4, 4)), (2, 2, 2)), (2, 2, 2))
    with pytest.raises(InfeasibleError):
        degrade_volume(Volume(np.zeros((4, 4, 4))), (0.5, 1, 1))


def test_spec_roundtrip():
    spec = sample_cell_spec(BinCoord(4, 2), 9)
    assert DegradationSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


# -- training pairs ----------------------------------------------------------------


def test_training_pairs_deterministic_and_fresh():
    pool = [smooth_phantom((12, 12, 12), seed=s) for s in range(2)]
    a = TrainingPairStream(pool, base_seed=5)
    b = TrainingPairStream(pool, base_seed=5)
    p0, q0 = a.pair(0), b.pair(0)
    assert p0.spec == q0.spec and np.array_equal(p0.input.data, q0.input.data)
    assert p0.input.shape == p0.target.shape and p0.input.spacing == p0.target.spacing


def test_consecutive_specs_distinct():
    gt = Volume(np.zeros((4, 4, 4)))
    rng = np.random.default_rng(0)
    dist = default_protocol("volbrain")
    specs = [make_training_pair(gt, rng, dist).spec.triplet for _ in range(1000)]
    assert len(set(specs)) == len(specs)
    specs = [make_training_pair(gt, rng, None).spec.triplet for _ in range(200)]
    assert len(set(specs)) == len(specs)
