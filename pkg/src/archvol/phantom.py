"""Deterministic dental-arch phantom: a jaw band plus teeth on a parabola.

The phantom makes every pipeline stage runnable without clinical data. The
jaw band follows the parabolic arch at mid intensity; equally spaced
spherical "teeth" sit on the curve at high intensity; background stays low.
Identical specs (including seed) produce bitwise-identical volumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arch import ArchCurve, ParabolaParams, build_curve, parabola_points, point_at, project_point
from .errors import PhantomSpecError
from .volume import Volume, index_to_norm


@dataclass(frozen=True)
class PhantomSpec:
    """Everything needed to synthesize one phantom."""

    arch: ParabolaParams = ParabolaParams(
        a=0.9, apex=(0.0, 0.55), axis=(0.0, -1.0), t_range=(-0.8, 0.8)
    )
    teeth: int = 14
    tooth_radius: float = 0.05
    band_thickness: float = 0.22
    band_height: float = 0.55  # vertical half-extent of the jaw band
    band_arc_margin: float = 0.1  # content-free arc fraction at each curve end
    bg_intensity: float = 0.05
    band_intensity: float = 0.45
    tooth_intensity: float = 1.0
    seed: int = 0
    curve_samples: int = 65

    def __post_init__(self):
        if self.teeth < 0:
            raise PhantomSpecError(f"tooth count must be >= 0, got {self.teeth}")
        if self.tooth_radius <= 0:
            raise PhantomSpecError(f"tooth radius must be > 0, got {self.tooth_radius}")
        if self.band_thickness <= 0 or self.band_height <= 0:
            raise PhantomSpecError("band thickness and height must be > 0")
        if not 0.0 <= self.band_arc_margin < 0.5:
            raise PhantomSpecError(
                f"band arc margin must be in [0, 0.5), got {self.band_arc_margin}"
            )


def phantom_curve(spec: PhantomSpec) -> ArchCurve:
    """The generating arch polyline (also what the phantom file ships)."""
    pts = parabola_points(spec.arch, spec.curve_samples)
    return build_curve(pts, z_range=(-spec.band_height, spec.band_height))


def tooth_centers(spec: PhantomSpec, curve: ArchCurve) -> np.ndarray:
    """Equal arc-length tooth centers on the occupied arc, (teeth, 2) points."""
    if spec.teeth == 0:
        return np.zeros((0, 2))
    lo = spec.band_arc_margin * curve.total_len
    span = curve.total_len * (1.0 - 2.0 * spec.band_arc_margin)
    s = lo + (np.arange(spec.teeth) + 0.5) * span / spec.teeth
    pts, _, _ = point_at(curve, s)
    return pts


def make_phantom(spec: PhantomSpec, dims=(64, 64, 128)) -> tuple[Volume, ArchCurve]:
    """Render the phantom volume and return it with its generating curve."""
    dims = tuple(int(d) for d in dims)
    curve = phantom_curve(spec)
    centers = tooth_centers(spec, curve)
    if spec.teeth >= 2:
        gaps = np.linalg.norm(np.diff(centers, axis=0), axis=1)
        min_gap = float(gaps.min())
        if min_gap < 1.8 * spec.tooth_radius:
            raise PhantomSpecError(
                f"teeth overlap beyond tolerance: min center distance {min_gap:.4f} "
                f"< 1.8 * radius {spec.tooth_radius:.4f}"
            )

    rng = np.random.default_rng(spec.seed)
    tooth_gain = 1.0 + 0.08 * rng.uniform(-1.0, 1.0, size=max(spec.teeth, 1))

    nd, nh, nw = dims
    cd = index_to_norm(np.arange(nd), nd)
    ch = index_to_norm(np.arange(nh), nh)
    cw = index_to_norm(np.arange(nw), nw)

    # planar distance field once per (depth, width) pair; height broadcasts
    yy, xx = np.meshgrid(cd, cw, indexing="ij")
    planar = np.stack([xx.ravel(), yy.ravel()], axis=-1)
    arc, dist = project_point(curve, planar)
    lo_s = spec.band_arc_margin * curve.total_len
    hi_s = curve.total_len - lo_s
    in_band_plane = (
        (np.abs(dist).reshape(nd, nw) <= spec.band_thickness / 2.0)
        & (arc.reshape(nd, nw) >= lo_s)
        & (arc.reshape(nd, nw) <= hi_s)
    )
    in_band_h = np.abs(ch) <= spec.band_height

    data = np.full(dims, spec.bg_intensity, dtype=np.float32)
    band = in_band_plane[:, np.newaxis, :] & in_band_h[np.newaxis, :, np.newaxis]
    data[band] = spec.band_intensity

    r2 = spec.tooth_radius**2
    for t in range(spec.teeth):
        cx, cy = centers[t]
        dz2 = (cd - cy)[:, np.newaxis, np.newaxis] ** 2
        dh2 = (ch - 0.0)[np.newaxis, :, np.newaxis] ** 2
        dx2 = (cw - cx)[np.newaxis, np.newaxis, :] ** 2
        inside = dz2 + dh2 + dx2 <= r2
        data[inside] = spec.tooth_intensity * tooth_gain[t]

    return Volume(dims, (1.0, 1.0, 1.0), data), curve
