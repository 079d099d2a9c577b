import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st

from archvol import (
    DimensionError,
    Volume,
    normalize_minmax,
    resample,
    sample_grid,
    sample_trilinear,
    voxel_center_grid,
)
from conftest import random_volume


def cube2() -> Volume:
    return Volume((2, 2, 2), (1, 1, 1), np.arange(8, dtype=np.float32))


def ramp_volume(dims, a, b, c) -> Volume:
    d = np.arange(dims[0])[:, None, None]
    h = np.arange(dims[1])[None, :, None]
    w = np.arange(dims[2])[None, None, :]
    return Volume(dims, (1, 1, 1), (a * d + b * h + c * w).astype(np.float32))


def test_center_of_two_cube_is_corner_mean():
    assert sample_trilinear(cube2(), (0.0, 0.0, 0.0)) == pytest.approx(3.5, abs=1e-12)


def test_first_corner_is_exact():
    assert sample_trilinear(cube2(), (-1.0, -1.0, -1.0)) == 0.0


def test_affine_ramp_reproduced_at_random_points(rng):
    dims = (3, 3, 3)
    a, b, c = 3.0, 5.0, 7.0  # integer-valued ramp: exactly representable
    vol = ramp_volume(dims, a, b, c)
    coords = rng.uniform(-1, 1, size=(100, 3))
    got = sample_grid(vol, coords)
    idx = (coords + 1.0) / 2.0 * (np.array(dims) - 1)
    expected = a * idx[:, 0] + b * idx[:, 1] + c * idx[:, 2]
    np.testing.assert_allclose(got, expected, atol=1e-6)


def test_voxel_centers_sample_stored_values(rng):
    vol = random_volume(rng, (4, 5, 6))
    coords = voxel_center_grid(vol.dims)
    got = sample_grid(vol, coords)
    np.testing.assert_allclose(got, vol.data, atol=1e-6)


def test_out_of_domain_clamps_to_border():
    vol = cube2()
    assert sample_trilinear(vol, (-5.0, -5.0, -5.0)) == 0.0
    assert sample_trilinear(vol, (5.0, 5.0, 5.0)) == 7.0


def test_degenerate_volume_rejected():
    vol = Volume((1, 2, 2), (1, 1, 1), np.zeros(4, dtype=np.float32))
    with pytest.raises(DimensionError):
        sample_trilinear(vol, (0.0, 0.0, 0.0))


@given(st.integers(0, 2**32 - 1))
def test_samples_stay_within_volume_range(seed):
    rng = np.random.default_rng(seed)
    vol = random_volume(rng, (3, 4, 3), lo=-2.0, hi=5.0)
    coords = rng.uniform(-1.5, 1.5, size=(50, 3))
    vals = sample_grid(vol, coords)
    assert vals.min() >= float(vol.data.min()) - 1e-9
    assert vals.max() <= float(vol.data.max()) + 1e-9


def test_volume_rejects_nan():
    data = np.zeros(8, dtype=np.float32)
    data[3] = np.nan
    with pytest.raises(DimensionError):
        Volume((2, 2, 2), (1, 1, 1), data)


def test_volume_rejects_bad_spacing():
    with pytest.raises(DimensionError):
        Volume((2, 2, 2), (1, 0, 1), np.zeros(8, dtype=np.float32))


# --- normalize_minmax ---


def test_normalize_three_values():
    vol = Volume((1, 1, 3), (1, 1, 1), np.array([2, 4, 6], dtype=np.float32))
    np.testing.assert_array_equal(normalize_minmax(vol).data.ravel(), [0, 0.5, 1])


def test_normalize_constant_maps_to_zero():
    vol = Volume((1, 1, 3), (1, 1, 1), np.full(3, 5, dtype=np.float32))
    np.testing.assert_array_equal(normalize_minmax(vol).data, np.zeros((1, 1, 3)))


def test_normalize_hits_exact_bounds(rng):
    vol = random_volume(rng, (5, 6, 7), lo=-3.0, hi=11.0)
    out = normalize_minmax(vol)
    assert abs(float(out.data.min())) <= 1e-7
    assert abs(float(out.data.max()) - 1.0) <= 1e-7


def test_normalize_idempotent(rng):
    vol = random_volume(rng, (4, 4, 4), lo=2.0, hi=9.0)
    once = normalize_minmax(vol)
    twice = normalize_minmax(once)
    np.testing.assert_allclose(twice.data, once.data, atol=1e-7)


# --- resample ---


def test_resample_identity_is_bitwise():
    vol = random_volume(np.random.default_rng(0), (4, 5, 6))
    out = resample(vol, (4, 5, 6))
    assert np.array_equal(out.data, vol.data)


def test_resample_cube_center():
    out = resample(cube2(), (3, 3, 3))
    assert out.data[1, 1, 1] == pytest.approx(3.5, abs=1e-6)


def test_down_up_resample_preserves_ramp():
    vol = ramp_volume((9, 9, 9), 1.0, 2.0, 4.0)
    down = resample(vol, (5, 5, 5))
    up = resample(down, (9, 9, 9))
    np.testing.assert_allclose(up.data, vol.data, atol=1e-6)


def test_resample_rejects_small_dims():
    with pytest.raises(DimensionError):
        resample(cube2(), (1, 3, 3))


def test_resample_preserves_physical_extent():
    vol = Volume((5, 5, 5), (2.0, 1.0, 0.5), np.zeros(125, dtype=np.float32))
    out = resample(vol, (9, 3, 5))
    for a in range(3):
        assert out.spacing[a] * (out.dims[a] - 1) == pytest.approx(
            vol.spacing[a] * (vol.dims[a] - 1), rel=1e-12
        )
