import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mind.degrade import (
    KINDS,
    LEVEL_RANGES,
    NoiseSpec,
    degrade,
    half_profile,
    motion_blur_kernel,
    sample_spec,
)
from mind.errors import DimensionError, ParameterError


def test_gaussian_sample_sd():
    x = np.full((512, 512), 0.5)
    y = degrade(x, NoiseSpec("gaussian", 0.10, seed=3))
    # clamping at 0/1 is 5 sd away and does not bias the estimate
    assert 0.098 <= np.std(y - x) <= 0.102


def test_poisson_variance_matches_mean_over_peak():
    x = np.full((512, 512), 0.5)
    y = degrade(x, NoiseSpec("poisson", 255.0, seed=4))
    expected = 0.5 / 255
    assert abs(np.var(y) - expected) / expected < 0.05
    assert abs(np.mean(y) - 0.5) < 1e-3


def test_speckle_on_zero_image_stays_zero():
    np.testing.assert_array_equal(degrade(np.zeros((32, 32)), NoiseSpec("speckle", 0.3, seed=1)), 0.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(1.0, 15.0), st.floats(0.0, math.pi), st.floats(0.0, 1.0))
def test_motion_blur_preserves_constants(length, angle, value):
    k = motion_blur_kernel(length, angle)
    assert abs(k.sum() - 1.0) < 1e-12
    x = np.full((40, 40), value)
    np.testing.assert_allclose(degrade(x, NoiseSpec("motion_blur", length, angle=angle)), x, atol=1e-12)


def test_horizontal_blur_kernel_is_a_row():
    k = motion_blur_kernel(5, 0.0)
    r = k.shape[0] // 2
    assert np.count_nonzero(k.sum(axis=1)) == 1 and k[r].sum() == pytest.approx(1.0)
    np.testing.assert_allclose(k[r], k[r][::-1])


@pytest.mark.parametrize("kind", KINDS)
def test_same_spec_same_output(kind, phantom):
    lo, hi = LEVEL_RANGES[kind]
    spec = NoiseSpec(kind, (lo + hi) / 2, seed=11)
    a = degrade(phantom, spec)
    np.testing.assert_array_equal(a, degrade(phantom, spec))
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_different_seeds_differ(phantom):
    a = degrade(phantom, NoiseSpec("gaussian", 0.1, seed=1))
    b = degrade(phantom, NoiseSpec("gaussian", 0.1, seed=2))
    assert not np.array_equal(a, b)


def test_half_profile_scales_noise():
    x = np.full((128, 128), 0.5)
    prof = half_profile(x.shape, low=0.2)
    y = degrade(x, NoiseSpec("gaussian", 0.1, seed=0, spatial_profile=prof))
    left, right = (y - x)[:, :64].std(), (y - x)[:, 64:].std()
    assert left == pytest.approx(0.02, rel=0.05)
    assert right == pytest.approx(0.10, rel=0.05)


@pytest.mark.parametrize(
    "spec",
    [
        NoiseSpec("salt", 0.1),
        NoiseSpec("gaussian", -0.1),
        NoiseSpec("poisson", 0.0),
        NoiseSpec("gaussian", float("nan")),
        NoiseSpec("poisson", 10.0, spatial_profile=np.ones((8, 8))),
        NoiseSpec("gaussian", 0.1, spatial_profile=np.full((8, 8), 2.0)),
    ],
)
def test_invalid_specs(spec):
    with pytest.raises(ParameterError):
        degrade(np.zeros((8, 8)), spec)


def test_profile_shape_mismatch():
    with pytest.raises(DimensionError):
        degrade(np.zeros((8, 8)), NoiseSpec("gaussian", 0.1, spatial_profile=np.ones((4, 8))))


def test_strict_mode_enforces_ranges():
    degrade(np.zeros((8, 8)), NoiseSpec("gaussian", 0.5))
    with pytest.raises(ParameterError):
        degrade(np.zeros((8, 8)), NoiseSpec("gaussian", 0.5), strict=True)


def test_spec_json_round_trip():
    spec = NoiseSpec("speckle", 0.2, seed=5, spatial_profile=half_profile((4, 4)))
    back = NoiseSpec.from_json(spec.to_json())
    assert back.kind == "speckle" and back.level == 0.2 and back.seed == 5
    np.testing.assert_array_equal(back.spatial_profile, spec.spatial_profile)


def test_curriculum_levels_in_range():
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(400):
        spec = sample_spec(rng)
        lo, hi = LEVEL_RANGES[spec.kind]
        assert lo <= spec.level <= hi
        seen.add(spec.kind)
    assert seen == set(KINDS)
