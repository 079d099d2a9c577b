"""Dental arch polyline: arc-length parameterization, frames, projection.

The curve lives in the axial plane of the native volume, in normalized
coordinates: a planar point (x, y) has x along the width axis and y along
the depth axis. Normals are tangents rotated +90 degrees, so they keep a
consistent side along the whole polyline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CurveError, RangeError

_MIN_SEGMENT = 1e-12


@dataclass(frozen=True)
class ArchCurve:
    """Ordered planar polyline with a cumulative arc-length table."""

    points: np.ndarray  # (M, 2) float64
    cum_len: np.ndarray  # (M,) float64, strictly increasing from 0
    total_len: float
    normal_side: int  # sign of the closed polyline's signed area
    z_range: tuple[float, float] | None = None


@dataclass(frozen=True)
class ParabolaParams:
    """Parabola y' = a * t**2 in its principal frame: point(t) = apex + t * e1 + a * t**2 * axis.

    a is canonicalized nonnegative (axis flips instead); e1 is axis rotated
    -90 degrees. t_range records the extent of the source polyline along e1,
    which the arch prior needs to reconstruct a finite arch.
    """

    a: float
    apex: tuple[float, float]
    axis: tuple[float, float]
    t_range: tuple[float, float]
    residual_rms: float = 0.0
    degenerate: bool = False


def _segments_intersect(p1, p2, q1, q2) -> np.ndarray:
    """Proper-or-touching intersection test, vectorized over pairs."""

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (
            b[..., 1] - a[..., 1]
        ) * (c[..., 0] - a[..., 0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    proper = ((d1 > 0) != (d2 > 0)) & ((d3 > 0) != (d4 > 0)) & (d1 != 0) & (d2 != 0)

    def on_seg(a, b, c, d):
        near = np.abs(d) <= _MIN_SEGMENT
        inside = (
            (np.minimum(a[..., 0], b[..., 0]) - _MIN_SEGMENT <= c[..., 0])
            & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0]) + _MIN_SEGMENT)
            & (np.minimum(a[..., 1], b[..., 1]) - _MIN_SEGMENT <= c[..., 1])
            & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1]) + _MIN_SEGMENT)
        )
        return near & inside

    touching = (
        on_seg(q1, q2, p1, d1)
        | on_seg(q1, q2, p2, d2)
        | on_seg(p1, p2, q1, d3)
        | on_seg(p1, p2, q2, d4)
    )
    return proper | touching


def _check_simple(pts: np.ndarray):
    """Reject self-intersecting polylines (non-adjacent segment pairs)."""
    m = len(pts) - 1
    if m < 3:
        return
    # a strictly monotone coordinate makes non-adjacent overlap impossible
    for axis in (0, 1):
        d = np.diff(pts[:, axis])
        if np.all(d > 0) or np.all(d < 0):
            return
    starts, ends = pts[:-1], pts[1:]
    lo = np.minimum(starts, ends)
    hi = np.maximum(starts, ends)
    for i in range(m - 2):
        j = np.arange(i + 2, m)
        # bounding-box prefilter
        cand = j[
            (lo[i, 0] <= hi[j, 0]) & (hi[i, 0] >= lo[j, 0])
            & (lo[i, 1] <= hi[j, 1]) & (hi[i, 1] >= lo[j, 1])
        ]
        if cand.size == 0:
            continue
        hits = _segments_intersect(
            np.broadcast_to(starts[i], (cand.size, 2)),
            np.broadcast_to(ends[i], (cand.size, 2)),
            starts[cand],
            ends[cand],
        )
        if np.any(hits):
            j_hit = int(cand[np.argmax(hits)])
            raise CurveError(f"polyline self-intersects: segment {i} crosses segment {j_hit}")


def build_curve(points, z_range=None) -> ArchCurve:
    """Validate a planar point list and attach its arc-length table."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise CurveError(f"points must be an (N, 2) array, got shape {pts.shape}")
    if len(pts) < 3:
        raise CurveError(f"need at least 3 points, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise CurveError("curve points contain NaN or Inf")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(seg <= _MIN_SEGMENT):
        i = int(np.argmax(seg <= _MIN_SEGMENT))
        raise CurveError(f"consecutive points {i} and {i + 1} coincide")
    _check_simple(pts)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    # shoelace over the implicitly closed polyline fixes the normal side
    x, y = pts[:, 0], pts[:, 1]
    area2 = float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
    side = 1 if area2 >= 0 else -1
    if z_range is not None:
        z_range = (float(z_range[0]), float(z_range[1]))
    return ArchCurve(pts, cum, float(cum[-1]), side, z_range)


def _segment_index(curve: ArchCurve, s: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(curve.cum_len, s, side="right") - 1
    return np.clip(idx, 0, len(curve.points) - 2)


def point_at(curve: ArchCurve, s):
    """Point, unit tangent, and unit normal at arc length s (scalar or array).

    The normal is the tangent rotated +90 degrees.
    """
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(s_arr < -1e-12) or np.any(s_arr > curve.total_len + 1e-12):
        raise RangeError(
            f"arc length out of [0, {curve.total_len}]: {float(np.min(s_arr))}"
            f"..{float(np.max(s_arr))}"
        )
    s_arr = np.clip(s_arr, 0.0, curve.total_len)
    seg = _segment_index(curve, s_arr)
    a = curve.points[seg]
    b = curve.points[seg + 1]
    seg_len = curve.cum_len[seg + 1] - curve.cum_len[seg]
    t = (s_arr - curve.cum_len[seg]) / seg_len
    pt = a + t[..., np.newaxis] * (b - a)
    tangent = (b - a) / seg_len[..., np.newaxis]
    normal = np.stack([-tangent[..., 1], tangent[..., 0]], axis=-1)
    if np.isscalar(s) or np.asarray(s).ndim == 0:
        return pt[()], tangent[()], normal[()]
    return pt, tangent, normal


def project_point(curve: ArchCurve, p):
    """Closest-point projection onto the polyline.

    Returns (s, d): the arc length of the closest point and the signed
    distance to it, positive on the normal side. Accepts a single (2,)
    point or an (N, 2) batch; ties go to the smaller arc length.
    """
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    a = curve.points[:-1]
    d_seg = curve.points[1:] - a
    len2 = np.sum(d_seg**2, axis=1)
    seg_len = np.sqrt(len2)

    n = len(pts)
    m = len(a)
    s_out = np.empty(n, dtype=np.float64)
    d_out = np.empty(n, dtype=np.float64)
    chunk = max(1, int(4e6 / max(m, 1)))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        rel = pts[lo:hi, np.newaxis, :] - a[np.newaxis, :, :]
        t = np.clip(np.einsum("kmi,mi->km", rel, d_seg) / len2, 0.0, 1.0)
        diff = rel - t[..., np.newaxis] * d_seg[np.newaxis, :, :]
        dist2 = np.einsum("kmi,kmi->km", diff, diff)
        best = np.argmin(dist2, axis=1)
        rows = np.arange(hi - lo)
        tb = t[rows, best]
        s_out[lo:hi] = curve.cum_len[best] + tb * seg_len[best]
        cross = d_seg[best, 0] * diff[rows, best, 1] - d_seg[best, 1] * diff[rows, best, 0]
        side = np.where(cross >= 0.0, 1.0, -1.0)  # keeps |d| = distance past the ends
        d_out[lo:hi] = side * np.sqrt(dist2[rows, best])
    if single:
        return float(s_out[0]), float(d_out[0])
    return s_out, d_out


def fit_parabola(curve: ArchCurve) -> ParabolaParams:
    """Least-squares parabola through the polyline's control points.

    The fit runs in the principal (PCA) frame of the points; collinear
    input degrades gracefully to a = 0 with the degenerate flag set.
    """
    pts = curve.points
    mu = pts.mean(axis=0)
    centered = pts - mu
    cov = centered.T @ centered / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    e1 = evecs[:, 1]  # largest variance: along-arch direction
    e2 = evecs[:, 0]
    t = centered @ e1
    h = centered @ e2

    def finish(a, apex_pt, axis_vec, rms, degenerate):
        # re-measure the extent in the frame parabola_points will rebuild
        e1_out = np.array([axis_vec[1], -axis_vec[0]])
        t_out = (pts - apex_pt) @ e1_out
        return ParabolaParams(
            float(a),
            (float(apex_pt[0]), float(apex_pt[1])),
            (float(axis_vec[0]), float(axis_vec[1])),
            (float(t_out.min()), float(t_out.max())),
            residual_rms=float(rms),
            degenerate=degenerate,
        )

    if float(np.max(np.abs(h))) <= 1e-12:
        return finish(0.0, mu, e2, np.sqrt(np.mean(h**2)), True)

    design = np.stack([np.ones_like(t), t, t**2], axis=1)
    coef, *_ = np.linalg.lstsq(design, h, rcond=None)
    c0, c1, c2 = coef
    rms = float(np.sqrt(np.mean((h - design @ coef) ** 2)))
    if abs(c2) <= 1e-12:
        return finish(0.0, mu + c0 * e2, e2, rms, True)

    t0 = -c1 / (2.0 * c2)
    h0 = c0 - c1**2 / (4.0 * c2)
    apex_pt = mu + t0 * e1 + h0 * e2
    a = float(c2)
    axis = e2
    if a < 0:
        a = -a
        axis = -axis
    return finish(a, apex_pt, axis, rms, False)


def parabola_points(params: ParabolaParams, n: int = 257) -> np.ndarray:
    """Sample the parabola uniformly in t over its recorded extent."""
    axis = np.asarray(params.axis, dtype=np.float64)
    e1 = np.array([axis[1], -axis[0]])
    apex = np.asarray(params.apex, dtype=np.float64)
    t = np.linspace(params.t_range[0], params.t_range[1], n)
    return apex + t[:, np.newaxis] * e1 + params.a * (t**2)[:, np.newaxis] * axis
