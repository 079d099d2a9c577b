"""Volume container, normalized-coordinate conventions, trilinear sampling.

Coordinate convention (corner-aligned): along each axis of size n, the
normalized coordinate -1 maps to the center of the first voxel and +1 to the
center of the last, i.e. continuous voxel index = (c + 1) / 2 * (n - 1).
Component order matches storage order: coordinate component a indexes array
axis a of the (D, H, W) data. Out-of-domain coordinates are legal values;
sampling clamps them to the border.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

Dims = tuple[int, int, int]
Spacing = tuple[float, float, float]


@dataclass(frozen=True)
class Volume:
    """3D scalar intensity field with physical voxel spacing.

    data is float32, shape (D, H, W), depth-major then row-major; treat it
    as immutable once constructed.
    """

    dims: Dims
    spacing: Spacing
    data: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise DimensionError(f"dims must be 3 positive integers, got {self.dims}")
        if any(s <= 0 for s in spacing):
            raise DimensionError(f"spacing must be strictly positive, got {self.spacing}")
        data = np.asarray(self.data, dtype=np.float32)
        if data.size != dims[0] * dims[1] * dims[2]:
            raise DimensionError(
                f"data has {data.size} values, dims {dims} require "
                f"{dims[0] * dims[1] * dims[2]}"
            )
        data = data.reshape(dims)
        if not np.all(np.isfinite(data)):
            raise DimensionError("volume data contains NaN or Inf")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "data", data)


def index_to_norm(i, n: int):
    """Normalized coordinate of voxel index i along an axis of size n."""
    if n < 2:
        raise DimensionError(f"axis of size {n} has no corner-aligned coordinates")
    return 2.0 * np.asarray(i, dtype=np.float64) / (n - 1) - 1.0


def norm_to_index(c, n: int):
    """Continuous voxel index of normalized coordinate c along an axis of size n."""
    if n < 2:
        raise DimensionError(f"axis of size {n} has no corner-aligned coordinates")
    return (np.asarray(c, dtype=np.float64) + 1.0) * 0.5 * (n - 1)


def in_domain(coords) -> np.ndarray:
    """Boolean mask of coordinates with every component in [-1, 1]."""
    c = np.asarray(coords, dtype=np.float64)
    return np.all(np.abs(c) <= 1.0, axis=-1)


def voxel_center_grid(dims: Dims) -> np.ndarray:
    """Normalized coordinates of all voxel centers, shape dims + (3,)."""
    axes = [index_to_norm(np.arange(n), n) for n in dims]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


def _check_sampleable(dims: Dims):
    if any(n < 2 for n in dims):
        raise DimensionError(f"trilinear sampling needs every dim >= 2, got {dims}")


def _cell_coords(dims: Dims, coords: np.ndarray):
    """Clamped cell indices and intra-cell fractions for each coordinate.

    Returns (i0, frac) where i0 has shape coords.shape[:-1] + (3,) int64 and
    frac the matching float64 fractions in [0, 1].
    """
    c = np.clip(coords, -1.0, 1.0)
    i0 = np.empty(c.shape, dtype=np.int64)
    frac = np.empty(c.shape, dtype=np.float64)
    for a, n in enumerate(dims):
        idx = (c[..., a] + 1.0) * 0.5 * (n - 1)
        lo = np.clip(np.floor(idx).astype(np.int64), 0, n - 2)
        i0[..., a] = lo
        frac[..., a] = idx - lo
    return i0, frac


def sample_grid(vol: Volume, coords) -> np.ndarray:
    """Trilinear samples at every coordinate, vectorized.

    coords has shape (..., 3) in normalized units; components outside [-1, 1]
    are clamped to the border. Returns float64 values of shape coords[:-1].
    """
    _check_sampleable(vol.dims)
    coords = np.asarray(coords, dtype=np.float64)
    data = vol.data
    i0, f = _cell_coords(vol.dims, coords)
    out = np.zeros(coords.shape[:-1], dtype=np.float64)
    for bd in (0, 1):
        wd = f[..., 0] if bd else 1.0 - f[..., 0]
        for bh in (0, 1):
            wh = f[..., 1] if bh else 1.0 - f[..., 1]
            for bw in (0, 1):
                ww = f[..., 2] if bw else 1.0 - f[..., 2]
                corner = data[i0[..., 0] + bd, i0[..., 1] + bh, i0[..., 2] + bw]
                out += wd * wh * ww * corner.astype(np.float64)
    return out


def sample_grid_with_grad(vol: Volume, coords) -> tuple[np.ndarray, np.ndarray]:
    """Samples plus the gradient of each sample w.r.t. its 3 coordinates.

    The gradient is zero wherever a component lies strictly outside [-1, 1]
    (border clamp is flat there). Returns (values, grad) with grad shaped
    like coords.
    """
    _check_sampleable(vol.dims)
    coords = np.asarray(coords, dtype=np.float64)
    data = vol.data
    i0, f = _cell_coords(vol.dims, coords)
    vals = np.zeros(coords.shape[:-1], dtype=np.float64)
    grad = np.zeros(coords.shape, dtype=np.float64)
    for bd in (0, 1):
        wd = f[..., 0] if bd else 1.0 - f[..., 0]
        gd = 1.0 if bd else -1.0
        for bh in (0, 1):
            wh = f[..., 1] if bh else 1.0 - f[..., 1]
            gh = 1.0 if bh else -1.0
            for bw in (0, 1):
                ww = f[..., 2] if bw else 1.0 - f[..., 2]
                gw = 1.0 if bw else -1.0
                corner = data[
                    i0[..., 0] + bd, i0[..., 1] + bh, i0[..., 2] + bw
                ].astype(np.float64)
                vals += wd * wh * ww * corner
                grad[..., 0] += gd * wh * ww * corner
                grad[..., 1] += wd * gh * ww * corner
                grad[..., 2] += wd * wh * gw * corner
    # d(index)/d(coord) per axis, then kill clamped components
    for a, n in enumerate(vol.dims):
        grad[..., a] *= 0.5 * (n - 1)
        grad[..., a][np.abs(coords[..., a]) > 1.0] = 0.0
    return vals, grad


def sample_trilinear(vol: Volume, c) -> float:
    """Trilinear interpolation of the 8 voxel neighbors of one coordinate."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (3,):
        raise DimensionError(f"coordinate must have 3 components, got shape {c.shape}")
    return float(sample_grid(vol, c[np.newaxis, :])[0])


def normalize_minmax(vol: Volume) -> Volume:
    """Affine rescale to [0, 1]; a constant volume maps to all zeros."""
    lo = float(vol.data.min())
    hi = float(vol.data.max())
    if hi == lo:
        out = np.zeros(vol.dims, dtype=np.float32)
    else:
        out = ((vol.data.astype(np.float64) - lo) / (hi - lo)).astype(np.float32)
    return Volume(vol.dims, vol.spacing, out)


def resample(vol: Volume, new_dims: Dims) -> Volume:
    """Trilinear resample to new dims, preserving physical extent.

    Output voxel at normalized coordinate c equals sample_trilinear(vol, c);
    spacing is rescaled so spacing * (n - 1) is unchanged per axis.
    """
    new_dims = tuple(int(d) for d in new_dims)
    if any(n < 2 for n in new_dims):
        raise DimensionError(f"resample target dims must be >= 2, got {new_dims}")
    _check_sampleable(vol.dims)
    spacing = tuple(
        vol.spacing[a] * (vol.dims[a] - 1) / (new_dims[a] - 1) for a in range(3)
    )
    if new_dims == vol.dims:
        # grid points sample exactly; skip the index round trip
        return Volume(vol.dims, spacing, vol.data.copy())
    coords = voxel_center_grid(new_dims)
    out = sample_grid(vol, coords).astype(np.float32)
    return Volume(new_dims, spacing, out)
