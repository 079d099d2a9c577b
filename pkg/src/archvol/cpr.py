"""Curve-guided flattening between native and arch-normalized canonical space.

Canonical axes are (depth-across-arch u, height v, arc-length w); native
axes are (axial depth, height, width) with the arch polyline living in the
(width=x, depth=y) axial plane. The forward map places canonical coordinates
into the native volume; the inverse assigns each native voxel the canonical
coordinate that reconstructs it, which is also how supervision grids and the
analytic lattice prior are generated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arch import ArchCurve, ParabolaParams, build_curve, parabola_points, point_at, project_point
from .errors import DimensionError
from .lattice import ControlLattice, DenseGrid, identity_lattice, voxel_center_grid
from .volume import Volume, index_to_norm, sample_grid

Dims = tuple[int, int, int]


@dataclass(frozen=True)
class CprConfig:
    """Canonical grid shape and the signed depth slab across the arch."""

    canonical_dims: Dims = (48, 64, 128)
    depth_range: tuple[float, float] = (-0.35, 0.35)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.canonical_dims)
        if any(d < 2 for d in dims):
            raise DimensionError(f"canonical dims must be >= 2, got {dims}")
        lo, hi = (float(self.depth_range[0]), float(self.depth_range[1]))
        if not lo < hi:
            raise DimensionError(f"depth_range must satisfy d_min < d_max, got {self.depth_range}")
        object.__setattr__(self, "canonical_dims", dims)
        object.__setattr__(self, "depth_range", (lo, hi))


def forward_map(curve: ArchCurve, cfg: CprConfig, coords) -> np.ndarray:
    """Map canonical (u, v, w) coordinates to native coordinates.

    w maps linearly onto arc length (clamped to the curve's ends), u maps
    linearly onto the signed depth slab, and height passes through. Outputs
    may be out of [-1, 1]; samplers clamp.
    """
    c = np.asarray(coords, dtype=np.float64)
    single = c.ndim == 1
    c = np.atleast_2d(c)
    d_min, d_max = cfg.depth_range
    s = np.clip((c[..., 2] + 1.0) * 0.5, 0.0, 1.0) * curve.total_len
    d = d_min + (c[..., 0] + 1.0) * 0.5 * (d_max - d_min)
    pt, _, normal = point_at(curve, s)
    planar = pt + d[..., np.newaxis] * normal
    out = np.stack([planar[..., 1], c[..., 1], planar[..., 0]], axis=-1)
    return out[0] if single else out


def canonical_coords_of(curve: ArchCurve, cfg: CprConfig, native_coords) -> np.ndarray:
    """Inverse of forward_map for arbitrary native coordinates.

    Projects each axial position onto the curve and converts (arc length,
    signed depth) back through the linear maps; height passes through.
    Returned components are unclamped.
    """
    c = np.asarray(native_coords, dtype=np.float64)
    single = c.ndim == 1
    c = np.atleast_2d(c)
    planar = np.stack([c[..., 2], c[..., 0]], axis=-1)  # (x, y)
    s, d = project_point(curve, planar.reshape(-1, 2))
    s = s.reshape(c.shape[:-1])
    d = d.reshape(c.shape[:-1])
    d_min, d_max = cfg.depth_range
    u = 2.0 * (d - d_min) / (d_max - d_min) - 1.0
    w = 2.0 * s / curve.total_len - 1.0
    out = np.stack([u, c[..., 1], w], axis=-1)
    return out[0] if single else out


def flatten(vol: Volume, curve: ArchCurve, cfg: CprConfig) -> Volume:
    """Resample the native volume into the arch-normalized canonical grid."""
    coords = voxel_center_grid(cfg.canonical_dims)
    native = forward_map(curve, cfg, coords.reshape(-1, 3)).reshape(coords.shape)
    vals = sample_grid(vol, native)
    return Volume(cfg.canonical_dims, (1.0, 1.0, 1.0), vals.astype(np.float32))


def synth_panorama(canonical: Volume, projection: str = "mean") -> np.ndarray:
    """Project the canonical volume along the depth-across-arch axis.

    Mean projection is the contract; max is available for experimentation
    only. Returns a float64 (Hc, Wc) image.
    """
    data = canonical.data.astype(np.float64)
    if projection == "mean":
        return data.mean(axis=0)
    if projection == "max":
        return data.max(axis=0)
    raise ValueError(f"unknown projection {projection!r}")


def inverse_map_grid(
    curve: ArchCurve, cfg: CprConfig, native_dims: Dims
) -> tuple[DenseGrid, np.ndarray]:
    """Canonical coordinate of every native voxel, plus an in-domain mask.

    Components are returned unclamped. The mask is True where the voxel lies
    inside the CPR slab: depth and height within [-1, 1] inclusive, arc
    strictly inside (-1, 1) — voxels beyond the arch ends project
    degenerately onto the end cross-sections and must not be fitted.
    """
    native_dims = tuple(int(d) for d in native_dims)
    if any(d < 2 for d in native_dims):
        raise DimensionError(f"native dims must be >= 2, got {native_dims}")
    nd, nh, nw = native_dims
    cd = index_to_norm(np.arange(nd), nd)
    cw = index_to_norm(np.arange(nw), nw)
    ch = index_to_norm(np.arange(nh), nh)
    # the curve is planar: one projection per (depth, width) pair
    yy, xx = np.meshgrid(cd, cw, indexing="ij")
    planar = np.stack([xx.ravel(), yy.ravel()], axis=-1)
    s, d = project_point(curve, planar)
    s = s.reshape(nd, nw)
    d = d.reshape(nd, nw)
    d_min, d_max = cfg.depth_range
    u = 2.0 * (d - d_min) / (d_max - d_min) - 1.0
    w = 2.0 * s / curve.total_len - 1.0
    coords = np.empty((nd, nh, nw, 3), dtype=np.float64)
    coords[..., 0] = u[:, np.newaxis, :]
    coords[..., 1] = ch[np.newaxis, :, np.newaxis]
    coords[..., 2] = w[:, np.newaxis, :]
    planar_ok = (np.abs(u) <= 1.0) & (np.abs(w) < 1.0)
    mask = planar_ok[:, np.newaxis, :] & (np.abs(ch) <= 1.0)[np.newaxis, :, np.newaxis]
    return DenseGrid(coords), mask


def arch_prior(
    dims: Dims, parabola: ParabolaParams, depth_range: tuple[float, float],
    samples: int = 257,
) -> ControlLattice:
    """Analytic warm-start lattice from a parabolic arch.

    Each control point stores the canonical coordinate the flattening
    inverse assigns to its native position. The parabola is densified into
    a polyline over its recorded extent; a zero-curvature parabola yields
    the exact affine (straight-arch) prior.
    """
    dims = tuple(int(d) for d in dims)
    if parabola.a == 0.0:
        samples = 3  # straight line: three points are exact
    curve = build_curve(parabola_points(parabola, samples))
    cfg = CprConfig((2, 2, 2), depth_range)
    ident = identity_lattice(dims)
    positions = np.moveaxis(ident.coords, 0, -1).reshape(-1, 3)
    canonical = canonical_coords_of(curve, cfg, positions)
    coords = np.moveaxis(canonical.reshape(dims + (3,)), -1, 0)
    return ControlLattice(coords)
