import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st

from archvol import CurveError, RangeError, build_curve, fit_parabola, point_at, project_point
from archvol.arch import parabola_points


def parabola_curve(a=0.5, apex=(0.0, 0.0), n=41, half_span=1.0):
    x = np.linspace(-half_span, half_span, n)
    pts = np.stack([x + apex[0], apex[1] + a * x**2], axis=1)
    return build_curve(pts)


def test_two_segment_arc_length():
    curve = build_curve([(-1, 0), (0, 1), (1, 0)])
    assert curve.total_len == pytest.approx(2 * np.sqrt(2), rel=1e-12)


def test_too_few_points_rejected():
    with pytest.raises(CurveError):
        build_curve([(0, 0), (1, 0)])


def test_duplicate_consecutive_points_rejected():
    with pytest.raises(CurveError):
        build_curve([(0, 0), (0, 0), (1, 0)])


def test_self_intersection_rejected():
    with pytest.raises(CurveError):
        build_curve([(0, 0), (2, 2), (2, 0), (0, 2)])


@given(st.integers(0, 2**32 - 1), st.integers(3, 20))
def test_monotone_x_curves_have_increasing_arc_table(seed, n):
    rng = np.random.default_rng(seed)
    x = np.cumsum(rng.uniform(0.05, 0.5, size=n))
    y = rng.uniform(-1, 1, size=n)
    curve = build_curve(np.stack([x, y], axis=1))
    assert np.all(np.diff(curve.cum_len) > 0)
    assert curve.cum_len[0] == 0.0
    assert curve.cum_len[-1] == curve.total_len


# --- point_at ---


def test_point_on_straight_segment():
    curve = build_curve([(0, 0), (1, 0), (2, 0)])
    pt, tan, nor = point_at(curve, 1.0)
    np.testing.assert_allclose(pt, [1, 0], atol=1e-12)
    np.testing.assert_allclose(tan, [1, 0], atol=1e-12)
    np.testing.assert_allclose(nor, [0, 1], atol=1e-12)


def test_point_at_zero_is_first_point():
    curve = parabola_curve()
    pt, _, _ = point_at(curve, 0.0)
    np.testing.assert_array_equal(pt, curve.points[0])


def test_point_at_out_of_range():
    curve = parabola_curve()
    with pytest.raises(RangeError):
        point_at(curve, curve.total_len + 0.5)
    with pytest.raises(RangeError):
        point_at(curve, -0.5)


def test_convex_arch_normals_stay_on_one_side():
    curve = parabola_curve(a=0.8, n=33)
    s = np.linspace(0, curve.total_len, 200)
    _, tan, _ = point_at(curve, s)
    crosses = tan[:-1, 0] * tan[1:, 1] - tan[:-1, 1] * tan[1:, 0]
    nonzero = crosses[np.abs(crosses) > 1e-15]
    assert np.all(nonzero > 0) or np.all(nonzero < 0)


# --- project_point ---


def test_perpendicular_foot():
    curve = build_curve([(0, 0), (1, 0), (2, 0)])
    s, d = project_point(curve, (1.0, 0.3))
    assert s == pytest.approx(1.0, abs=1e-12)
    assert d == pytest.approx(0.3, abs=1e-12)


def test_point_on_curve_has_zero_distance():
    curve = parabola_curve()
    pt, _, _ = point_at(curve, 0.37 * curve.total_len)
    _, d = project_point(curve, pt)
    assert abs(d) <= 1e-12


def test_projection_matches_dense_sampling_oracle(rng):
    curve = parabola_curve(a=0.7, n=51)
    pts = rng.uniform(-1.3, 1.3, size=(1000, 2))
    s_got, d_got = project_point(curve, pts)

    # oracle: distance minimization over 1e5 dense arc-length samples
    s_dense = np.linspace(0, curve.total_len, 100_000)
    curve_pts, _, _ = point_at(curve, s_dense)
    for i in range(0, 1000, 7):  # subsample for runtime
        d2 = np.sum((curve_pts - pts[i]) ** 2, axis=1)
        j = int(np.argmin(d2))
        assert abs(s_got[i] - s_dense[j]) <= 1e-4
        assert abs(abs(d_got[i]) - np.sqrt(d2[j])) <= 1e-4


def test_offset_round_trip(rng):
    # |d| below the minimal curvature radius: projection inverts the offset.
    # Polyline corners shift concave-side feet by O(|d| * kappa * ds), so the
    # 1e-4 contract needs segments much shorter than the offset scale.
    curve = parabola_curve(a=0.8, n=8193)
    r_min = 1.0 / (2 * 0.8)
    s = rng.uniform(0, curve.total_len, size=200)
    d = rng.uniform(-0.3 * r_min, 0.3 * r_min, size=200)
    pt, _, nor = point_at(curve, s)
    s2, d2 = project_point(curve, pt + d[:, None] * nor)
    assert np.max(np.abs(s2 - s)) <= 1e-4
    assert np.max(np.abs(d2 - d)) <= 1e-4


# --- fit_parabola ---


def test_exact_parabola_recovered():
    x = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    curve = build_curve(np.stack([x, 0.5 * x**2], axis=1))
    fit = fit_parabola(curve)
    assert fit.a == pytest.approx(0.5, abs=1e-9)
    np.testing.assert_allclose(fit.apex, (0, 0), atol=1e-9)
    assert fit.residual_rms <= 1e-9
    assert not fit.degenerate


def test_collinear_points_flagged_degenerate():
    curve = build_curve([(0, 0), (1, 1), (2, 2), (3, 3)])
    fit = fit_parabola(curve)
    assert fit.degenerate
    assert fit.a == 0.0


def test_noisy_parabola_matches_grid_search_oracle(rng):
    a_true, x0_true, y0_true = 0.8, 0.1, 0.0
    x = x0_true + np.linspace(-0.9, 0.9, 13)
    noise = 0.05 * rng.standard_normal(13)
    y = y0_true + a_true * (x - x0_true) ** 2 + noise
    curve = build_curve(np.stack([x, y], axis=1))
    fit = fit_parabola(curve)

    # brute-force grid search over (a, x0, y0)
    best = (np.inf, None)
    for a in np.linspace(0.4, 1.2, 81):
        for x0 in np.linspace(-0.2, 0.4, 61):
            pred_base = a * (x - x0) ** 2
            y0 = float(np.mean(y - pred_base))
            sse = float(np.sum((y - pred_base - y0) ** 2))
            if sse < best[0]:
                best = (sse, (a, x0, y0))
    a_grid, x0_grid, _ = best[1]
    assert fit.a == pytest.approx(a_grid, abs=0.08)
    assert fit.apex[0] == pytest.approx(x0_grid, abs=0.08)


def test_parabola_points_reproduce_fit_geometry():
    curve = parabola_curve(a=0.6, apex=(0.2, -0.1), n=21)
    fit = fit_parabola(curve)
    resampled = parabola_points(fit, n=21)
    np.testing.assert_allclose(np.sort(resampled[:, 0]), np.sort(curve.points[:, 0]), atol=1e-6)
    np.testing.assert_allclose(
        resampled[np.argsort(resampled[:, 0]), 1],
        curve.points[np.argsort(curve.points[:, 0]), 1],
        atol=1e-6,
    )
