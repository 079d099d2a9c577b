import numpy as np
import pytest

from archvol import (
    CprConfig,
    Volume,
    arch_prior,
    build_curve,
    canonical_coords_of,
    flatten,
    forward_map,
    identity_lattice,
    inverse_map_grid,
    project_point,
    sample_trilinear,
    synth_panorama,
    upsample_lattice,
    voxel_center_grid,
    warp,
)
from archvol.arch import ParabolaParams
from conftest import random_volume


def straight_curve():
    return build_curve([(-1.0, 0.0), (0.0, 0.0), (1.0, 0.0)])


def dense_parabola(a=0.8, n=8193, half=0.9):
    x = np.linspace(-half, half, n)
    return build_curve(np.stack([x, a * x**2 - 0.3], axis=1))


def gaussian_volume(dims, center, sigma=0.25, floor=0.1):
    g = voxel_center_grid(dims)
    d2 = ((g - np.asarray(center)) ** 2).sum(-1)
    return Volume(dims, (1, 1, 1), (floor + np.exp(-d2 / (2 * sigma**2))).astype(np.float32))


# --- forward_map ---


def test_straight_arch_is_axis_permutation():
    curve = straight_curve()
    cfg = CprConfig((4, 4, 4), (-0.5, 0.5))
    for u, v, w in [(0.0, 0.3, 0.0), (-1.0, -0.2, 0.5), (1.0, 0.9, -1.0)]:
        native = forward_map(curve, cfg, (u, v, w))
        # arc maps to x (width axis), depth offset to y (depth axis)
        np.testing.assert_allclose(native, [0.5 * u, v, w], atol=1e-12)


def test_mid_depth_lands_on_curve():
    curve = dense_parabola(n=129)
    cfg = CprConfig((4, 4, 4), (-0.4, 0.4))
    for w in np.linspace(-1, 1, 17):
        native = forward_map(curve, cfg, (0.0, 0.2, w))
        _, d = project_point(curve, (native[2], native[0]))
        assert abs(d) <= 1e-9


def test_forward_then_project_recovers_arc_depth(rng):
    curve = dense_parabola()
    cfg = CprConfig((4, 4, 4), (-0.15, 0.15))
    coords = rng.uniform(-1, 1, size=(1000, 3))
    native = forward_map(curve, cfg, coords)
    s, d = project_point(curve, np.stack([native[:, 2], native[:, 0]], axis=-1))
    u = 2 * (d - cfg.depth_range[0]) / (cfg.depth_range[1] - cfg.depth_range[0]) - 1
    w = 2 * s / curve.total_len - 1
    assert np.max(np.abs(u - coords[:, 0])) <= 1e-4
    assert np.max(np.abs(w - coords[:, 2])) <= 1e-4


# --- flatten ---


def test_flatten_constant_volume():
    vol = Volume((4, 5, 6), (1, 1, 1), np.full(120, 3.25, dtype=np.float32))
    out = flatten(vol, dense_parabola(n=65), CprConfig((4, 4, 8), (-0.3, 0.3)))
    np.testing.assert_allclose(out.data, 3.25, atol=1e-6)


def test_flatten_straight_arch_matches_hand_sampling(rng):
    vol = random_volume(rng, (6, 5, 7))
    cfg = CprConfig((4, 5, 7), (-0.5, 0.5))
    out = flatten(vol, straight_curve(), cfg)
    dc, hc, wc = cfg.canonical_dims
    for i in [0, 1, 3]:
        for j in [0, 2, 4]:
            for k in [0, 3, 6]:
                u = 2 * i / (dc - 1) - 1
                v = 2 * j / (hc - 1) - 1
                w = 2 * k / (wc - 1) - 1
                expected = sample_trilinear(vol, (0.5 * u, v, w))
                assert out.data[i, j, k] == pytest.approx(expected, abs=1e-6)


def test_flatten_full_depth_straight_arch_is_identity(rng):
    vol = random_volume(rng, (5, 6, 7))
    cfg = CprConfig((5, 6, 7), (-1.0, 1.0))
    out = flatten(vol, straight_curve(), cfg)
    np.testing.assert_allclose(out.data, vol.data, atol=1e-6)


def test_flatten_puts_on_curve_blob_at_mid_depth():
    curve = dense_parabola(n=129)
    cfg = CprConfig((33, 16, 64), (-0.4, 0.4))
    from archvol import point_at

    pt, _, _ = point_at(curve, 0.5 * curve.total_len)
    vol = gaussian_volume((48, 16, 48), (pt[1], 0.0, pt[0]), sigma=0.12)
    out = flatten(vol, curve, cfg)
    u_idx = np.unravel_index(np.argmax(out.data), out.dims)[0]
    assert abs(u_idx - (cfg.canonical_dims[0] - 1) / 2) <= 1.0


def test_flatten_is_intensity_linear(rng):
    vol = random_volume(rng, (6, 6, 10))
    curve = dense_parabola(n=65)
    cfg = CprConfig((5, 6, 9), (-0.3, 0.3))
    base = flatten(vol, curve, cfg)
    scaled_in = Volume(vol.dims, vol.spacing, (0.5 * vol.data + 0.25).astype(np.float32))
    scaled_out = flatten(scaled_in, curve, cfg)
    np.testing.assert_allclose(scaled_out.data, 0.5 * base.data + 0.25, atol=1e-6)


# --- synth_panorama ---


def test_panorama_of_constant_volume():
    vol = Volume((4, 3, 5), (1, 1, 1), np.full(60, 2.5, dtype=np.float32))
    np.testing.assert_allclose(synth_panorama(vol), 2.5, atol=1e-12)


def test_panorama_single_voxel_mean():
    data = np.zeros((4, 3, 5), dtype=np.float32)
    data[2, 1, 3] = 1.0
    pano = synth_panorama(Volume((4, 3, 5), (1, 1, 1), data))
    assert pano[1, 3] == pytest.approx(0.25, abs=1e-12)
    assert pano.sum() == pytest.approx(0.25, abs=1e-12)


def test_panorama_matches_triple_loop_oracle(rng):
    vol = random_volume(rng, (5, 6, 7))
    pano = synth_panorama(vol)
    for j in range(6):
        for k in range(7):
            acc = 0.0
            for i in range(5):
                acc += float(vol.data[i, j, k])
            assert pano[j, k] == pytest.approx(acc / 5, abs=1e-6)


def test_panorama_of_depth_constant_volume_equals_slice(rng):
    sl = rng.uniform(size=(6, 7)).astype(np.float32)
    vol = Volume((4, 6, 7), (1, 1, 1), np.broadcast_to(sl, (4, 6, 7)).copy())
    np.testing.assert_allclose(synth_panorama(vol), sl, atol=1e-7)


# --- inverse_map_grid ---


def test_inverse_straight_arch_is_affine():
    curve = straight_curve()
    cfg = CprConfig((4, 4, 4), (-0.5, 0.5))
    grid, mask = inverse_map_grid(curve, cfg, (5, 4, 6))
    centers = voxel_center_grid((5, 4, 6))
    np.testing.assert_allclose(grid.coords[..., 0], 2 * centers[..., 0], atol=1e-9)
    np.testing.assert_allclose(grid.coords[..., 1], centers[..., 1], atol=1e-12)
    np.testing.assert_allclose(grid.coords[..., 2], centers[..., 2], atol=1e-9)
    assert mask[2, 1, 3] == (abs(grid.coords[2, 1, 3, 0]) <= 1)


def test_inverse_forward_round_trip_on_in_domain_voxels():
    curve = dense_parabola(a=0.8, n=8193, half=0.9)
    cfg = CprConfig((4, 4, 4), (-0.12, 0.12))
    grid, mask = inverse_map_grid(curve, cfg, (24, 4, 24))
    native = forward_map(curve, cfg, grid.coords[mask])
    centers = voxel_center_grid((24, 4, 24))[mask]
    assert np.max(np.abs(native - centers)) <= 1e-4


def test_in_domain_fraction_matches_monte_carlo(rng):
    curve = dense_parabola(a=0.6, n=513, half=0.8)
    cfg = CprConfig((4, 4, 4), (-0.25, 0.25))
    _, mask = inverse_map_grid(curve, cfg, (96, 4, 96))
    frac_grid = float(mask.mean())

    pts = rng.uniform(-1, 1, size=(200_000, 2))  # (x, y) axial samples
    s, d = project_point(curve, pts)
    inside = (np.abs(d) <= 0.25) & (s > 0) & (s < curve.total_len)
    frac_mc = float(inside.mean())
    assert frac_grid == pytest.approx(frac_mc, abs=0.02 * max(frac_mc, frac_grid))


# --- warp round trip through the analytic grid ---


def test_warp_through_inverse_grid_recovers_blob_centroid():
    curve = dense_parabola(a=0.8, n=257, half=0.9)
    cfg = CprConfig((33, 24, 64), (-0.3, 0.3))
    from archvol import point_at

    pt, _, _ = point_at(curve, 0.42 * curve.total_len)
    dims = (40, 24, 40)
    vol = gaussian_volume(dims, (pt[1], 0.1, pt[0]), sigma=0.1, floor=0.0)
    canonical = flatten(vol, curve, cfg)
    grid, _ = inverse_map_grid(curve, cfg, dims)
    out = warp(canonical, grid)

    def centroid(v):
        sel = v.data > 0.5 * v.data.max()
        return np.argwhere(sel).mean(axis=0)

    assert np.max(np.abs(centroid(out) - centroid(vol))) <= 0.5


# --- arch_prior ---


def test_arch_prior_straight_line_is_affine():
    parabola = ParabolaParams(0.0, (0.0, 0.0), (0.0, 1.0), (-1.0, 1.0))
    prior = arch_prior((3, 3, 3), parabola, (-0.5, 0.5))
    ident = identity_lattice((3, 3, 3))
    np.testing.assert_allclose(prior.coords[0], 2 * ident.coords[0], atol=1e-9)
    np.testing.assert_allclose(prior.coords[1], ident.coords[1], atol=1e-12)
    np.testing.assert_allclose(prior.coords[2], ident.coords[2], atol=1e-9)


def test_arch_prior_apex_control_point_maps_to_mid_depth():
    # apex at the lattice center control point, symmetric depth range
    parabola = ParabolaParams(0.9, (0.0, 0.0), (0.0, -1.0), (-0.8, 0.8))
    prior = arch_prior((3, 3, 3), parabola, (-0.3, 0.3))
    assert prior.coords[0, 1, 1, 1] == pytest.approx(0.0, abs=1e-9)


def test_arch_prior_upsample_matches_dense_inverse():
    parabola = ParabolaParams(0.7, (0.0, 0.4), (0.0, -1.0), (-0.7, 0.7))
    depth_range = (-0.35, 0.35)
    dims = (5, 4, 9)
    prior = arch_prior(dims, parabola, depth_range, samples=2049)
    native_dims = (16, 16, 16)
    up = upsample_lattice(prior, native_dims)

    from archvol.arch import build_curve as bc, parabola_points

    curve = bc(parabola_points(parabola, 2049))
    cfg = CprConfig((4, 4, 4), depth_range)
    grid, mask = inverse_map_grid(curve, cfg, native_dims)

    # oracle: trilinear blend of the analytic inverse evaluated at cell
    # corners must equal the upsampled prior entry for entry
    ident = identity_lattice(dims)
    corner_vals = canonical_coords_of(
        curve, cfg, np.moveaxis(ident.coords, 0, -1).reshape(-1, 3)
    ).reshape(dims + (3,))
    np.testing.assert_allclose(prior.coords, np.moveaxis(corner_vals, -1, 0), atol=1e-12)
    centers = voxel_center_grid(native_dims)
    for idx in [(0, 0, 0), (7, 9, 3), (15, 15, 15), (4, 12, 8), (11, 2, 14)]:
        pos = centers[idx]
        li = [(pos[a] + 1) / 2 * (dims[a] - 1) for a in range(3)]
        lo = [min(int(np.floor(v)), dims[a] - 2) for a, v in enumerate(li)]
        f = [li[a] - lo[a] for a in range(3)]
        blend = np.zeros(3)
        for bd in (0, 1):
            for bh in (0, 1):
                for bw in (0, 1):
                    wgt = (
                        (f[0] if bd else 1 - f[0])
                        * (f[1] if bh else 1 - f[1])
                        * (f[2] if bw else 1 - f[2])
                    )
                    blend += wgt * corner_vals[lo[0] + bd, lo[1] + bh, lo[2] + bw]
        np.testing.assert_allclose(up.coords[idx], blend, atol=1e-9)

    # inside the slab the inverse field is smooth: the lattice approximation
    # error is small and shrinks under refinement (outside, the field has
    # creases at the arch ends and medial axis, where no lattice can help)
    err = np.abs(up.coords - grid.coords)[mask].max()
    assert err <= 0.12
    finer = arch_prior((9, 4, 17), parabola, depth_range, samples=2049)
    err_finer = np.abs(upsample_lattice(finer, native_dims).coords - grid.coords)[mask].max()
    assert err_finer < err
