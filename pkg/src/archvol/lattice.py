"""Control lattices, dense sampling grids, and backward warping.

A ControlLattice stores absolute normalized sampling coordinates (not
displacements) on a sparse grid of control points; trilinear upsampling
turns it into a dense per-voxel sampling grid, and backward warping builds
the output volume by sampling the source at each grid coordinate. Raw
lattices are never clamped in storage; clamping happens at warp time only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .volume import Volume, sample_grid, voxel_center_grid

Dims = tuple[int, int, int]


@dataclass(frozen=True)
class ControlLattice:
    """Sparse grid of absolute sampling coordinates, coords (3, Dc, Hc, Wc)."""

    coords: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 4 or coords.shape[0] != 3:
            raise DimensionError(
                f"lattice coords must be (3, Dc, Hc, Wc), got {coords.shape}"
            )
        if any(n < 2 for n in coords.shape[1:]):
            raise DimensionError(f"lattice dims must be >= 2, got {coords.shape[1:]}")
        if not np.all(np.isfinite(coords)):
            raise DimensionError("lattice coords contain NaN or Inf")
        object.__setattr__(self, "coords", coords)

    @property
    def dims(self) -> Dims:
        return self.coords.shape[1:]


@dataclass(frozen=True)
class DenseGrid:
    """Per-voxel sampling coordinates, coords (D, H, W, 3)."""

    coords: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 4 or coords.shape[3] != 3:
            raise DimensionError(
                f"dense grid coords must be (D, H, W, 3), got {coords.shape}"
            )
        if not np.all(np.isfinite(coords)):
            raise DimensionError("dense grid coords contain NaN or Inf")
        object.__setattr__(self, "coords", coords)

    @property
    def dims(self) -> Dims:
        return self.coords.shape[:3]


def identity_lattice(dims: Dims) -> ControlLattice:
    """Lattice whose control points sample their own normalized positions."""
    grid = voxel_center_grid(tuple(int(d) for d in dims))  # (Dc,Hc,Wc,3)
    return ControlLattice(np.moveaxis(grid, -1, 0).copy())


def identity_grid(dims: Dims) -> DenseGrid:
    """Dense grid mapping every voxel to itself."""
    return DenseGrid(voxel_center_grid(tuple(int(d) for d in dims)))


def is_identity(lat: ControlLattice, tol: float = 0.0) -> bool:
    ref = identity_lattice(lat.dims)
    return bool(np.max(np.abs(lat.coords - ref.coords)) <= tol)


def upsample_lattice(lat: ControlLattice, out_dims: Dims) -> DenseGrid:
    """Trilinear interpolation of the lattice onto a dense voxel grid.

    Corner-aligned on both sides, so lattice corners land exactly on volume
    corners and an identity lattice upsamples to the identity grid.
    """
    out_dims = tuple(int(d) for d in out_dims)
    if any(n < 2 for n in out_dims):
        raise DimensionError(f"upsample target dims must be >= 2, got {out_dims}")
    dc, hc, wc = lat.dims
    axes = [
        np.arange(out_dims[a]) * (lat.dims[a] - 1) / (out_dims[a] - 1)
        for a in range(3)
    ]
    idx = np.meshgrid(*axes, indexing="ij")
    lo = [np.clip(np.floor(i).astype(np.int64), 0, n - 2) for i, n in zip(idx, (dc, hc, wc))]
    f = [i - l for i, l in zip(idx, lo)]
    out = np.zeros(out_dims + (3,), dtype=np.float64)
    for bd in (0, 1):
        wd = f[0] if bd else 1.0 - f[0]
        for bh in (0, 1):
            wh = f[1] if bh else 1.0 - f[1]
            for bw in (0, 1):
                ww = f[2] if bw else 1.0 - f[2]
                corner = lat.coords[:, lo[0] + bd, lo[1] + bh, lo[2] + bw]
                out += (wd * wh * ww)[..., np.newaxis] * np.moveaxis(corner, 0, -1)
    return DenseGrid(out)


def clip_lattice(lat: ControlLattice) -> ControlLattice:
    """Clamp every coordinate to [-1, 1]; idempotent."""
    return ControlLattice(np.clip(lat.coords, -1.0, 1.0))


def clip_grid(grid: DenseGrid) -> DenseGrid:
    """Clamp every coordinate to [-1, 1]; idempotent."""
    return DenseGrid(np.clip(grid.coords, -1.0, 1.0))


def warp(canonical: Volume, grid: DenseGrid, spacing=(1.0, 1.0, 1.0)) -> Volume:
    """Backward-warp: output voxel x samples the source at clip(grid(x)).

    The grid's dims define the output dims; spacing is caller-supplied
    because the source volume's spacing is not meaningful after flattening.
    """
    vals = sample_grid(canonical, np.clip(grid.coords, -1.0, 1.0))
    return Volume(grid.dims, spacing, vals.astype(np.float32))


def compose_coarse_fine(
    p0: ControlLattice, dp_coarse: np.ndarray, dp_fine: np.ndarray
) -> tuple[ControlLattice, ControlLattice]:
    """Stack residual updates onto the prior without any clamping.

    Returns (coarse_raw, final_raw) = (p0 + dp_coarse, p0 + dp_coarse + dp_fine).
    """
    dp_coarse = np.asarray(dp_coarse, dtype=np.float64)
    dp_fine = np.asarray(dp_fine, dtype=np.float64)
    if dp_coarse.shape != p0.coords.shape or dp_fine.shape != p0.coords.shape:
        raise DimensionError(
            f"residual shapes {dp_coarse.shape}, {dp_fine.shape} must match "
            f"lattice {p0.coords.shape}"
        )
    coarse = ControlLattice(p0.coords + dp_coarse)
    final = ControlLattice(coarse.coords + dp_fine)
    return coarse, final
