"""Reconstruction metrics: PSNR, 3D SSIM, shared-threshold DSC, HD95.

Binarization follows the shared-threshold rule: both volumes are min-max
normalized independently and thresholded strictly above the mean intensity
of the normalized reference, so DSC reflects overlap of high-density
structure rather than absolute calibration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.spatial import cKDTree

from .errors import ArchVolError, DimensionError
from .volume import Volume, normalize_minmax

PSNR_CAP_DB = 99.0


@dataclass(frozen=True)
class BinaryMask:
    """Boolean voxel mask with the spacing needed for distance metrics."""

    data: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=bool)
        if data.ndim != 3:
            raise DimensionError(f"mask must be 3D, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if any(s <= 0 for s in spacing):
            raise DimensionError(f"spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)


def _check_same_dims(a, b, what: str):
    if a != b:
        raise DimensionError(f"{what} dims differ: {a} vs {b}")


def psnr(pred: Volume, gt: Volume, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE) in dB; exact-zero MSE returns the 99 dB cap."""
    _check_same_dims(pred.dims, gt.dims, "volume")
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    diff = pred.data.astype(np.float64) - gt.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(peak * peak / mse))


def ssim3d(
    pred: Volume,
    gt: Volume,
    window: int = 7,
    c1: float = 0.01**2,
    c2: float = 0.03**2,
    window_type: str = "uniform",
    sigma: float = 1.5,
) -> float:
    """Mean local SSIM over every fully-interior cubic window position.

    Inputs are expected pre-normalized to [0, 1] (constants default to the
    unit-dynamic-range values). Local variance uses the population
    convention (divide by window voxel count). A Gaussian window is
    available behind window_type="gaussian" but the contract is uniform.
    """
    _check_same_dims(pred.dims, gt.dims, "volume")
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and positive, got {window}")
    if any(n < window for n in pred.dims):
        raise DimensionError(f"window {window} exceeds volume dims {pred.dims}")
    x = pred.data.astype(np.float64)
    y = gt.data.astype(np.float64)
    if window_type == "uniform":
        def mean_filter(arr):
            return uniform_filter(arr, size=window, mode="constant")
    elif window_type == "gaussian":
        from scipy.ndimage import gaussian_filter

        radius = window // 2

        def mean_filter(arr):
            return gaussian_filter(arr, sigma=sigma, mode="constant", radius=radius)
    else:
        raise ValueError(f"unknown window_type {window_type!r}")

    mu_x = mean_filter(x)
    mu_y = mean_filter(y)
    mu_xx = mean_filter(x * x)
    mu_yy = mean_filter(y * y)
    mu_xy = mean_filter(x * y)
    var_x = mu_xx - mu_x * mu_x
    var_y = mu_yy - mu_y * mu_y
    cov = mu_xy - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    r = window // 2
    interior = ssim_map[r:-r or None, r:-r or None, r:-r or None]
    return float(interior.mean())


def binarize_shared_threshold(
    pred: Volume, gt: Volume
) -> tuple[BinaryMask, BinaryMask, float]:
    """Normalize both volumes, threshold both strictly above mean(norm gt)."""
    _check_same_dims(pred.dims, gt.dims, "volume")
    norm_pred = normalize_minmax(pred)
    norm_gt = normalize_minmax(gt)
    mu = float(norm_gt.data.astype(np.float64).mean())
    m_pred = BinaryMask(norm_pred.data > mu, pred.spacing)
    m_gt = BinaryMask(norm_gt.data > mu, gt.spacing)
    return m_pred, m_gt, mu


def dsc(a: BinaryMask, b: BinaryMask) -> float:
    """Dice similarity 2|a&b| / (|a|+|b|); two empty masks agree perfectly."""
    _check_same_dims(a.data.shape, b.data.shape, "mask")
    na = int(a.data.sum())
    nb = int(b.data.sum())
    if na + nb == 0:
        return 1.0
    inter = int(np.logical_and(a.data, b.data).sum())
    return 2.0 * inter / (na + nb)


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a six-connected background neighbor.

    The outside of the volume counts as background, so foreground voxels on
    the array border are surface voxels.
    """
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1, mode="constant", constant_values=False)
    interior = np.ones_like(m)
    for axis in range(3):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        interior &= padded[tuple(lo)] & padded[tuple(hi)]
    return m & ~interior


def hd95(a: BinaryMask, b: BinaryMask) -> float:
    """95th-percentile symmetric surface distance in millimeters.

    Pools both directed nearest-surface distance sets (spacing-weighted
    Euclidean between surface voxel centers) and takes the nearest-rank
    95th percentile of the combined multiset.
    """
    _check_same_dims(a.data.shape, b.data.shape, "mask")
    if a.spacing != b.spacing:
        raise DimensionError(f"mask spacings differ: {a.spacing} vs {b.spacing}")
    if not a.data.any() or not b.data.any():
        raise ArchVolError("hd95 is undefined for an empty mask")
    spacing = np.asarray(a.spacing, dtype=np.float64)
    pa = np.argwhere(surface_voxels(a.data)) * spacing
    pb = np.argwhere(surface_voxels(b.data)) * spacing
    d_ab = cKDTree(pb).query(pa)[0]
    d_ba = cKDTree(pa).query(pb)[0]
    pooled = np.sort(np.concatenate([d_ab, d_ba]))
    rank = int(np.ceil(0.95 * pooled.size)) - 1
    return float(pooled[rank])
