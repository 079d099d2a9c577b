"""Lattice fitting, the deformation loss stack, and the classical optimizer.

Supervision generation fits a sparse control lattice to a dense
correspondence grid by regularized least squares; training-style losses
(raw L1, clipped-consistency, TV smoothness, out-of-bound) act on raw
lattices; and a coarse-then-fine backtracking gradient descent stands in
for learned residual predictors, with analytic gradients flowing through
warping and lattice upsampling.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from .arch import ArchCurve
from .cpr import CprConfig, inverse_map_grid
from .errors import DimensionError, DivergenceError, FitRankError
from .lattice import ControlLattice, DenseGrid, compose_coarse_fine, identity_lattice
from .volume import Volume, sample_grid_with_grad, voxel_center_grid, resample

Dims = tuple[int, int, int]


@dataclass(frozen=True)
class LossWeights:
    """Nonnegative weights for the clipped / smoothness / out-of-bound terms."""

    lambda_clip: float = 0.01
    lambda_tv: float = 0.1
    lambda_oob: float = 1.0

    def __post_init__(self):
        for name in ("lambda_clip", "lambda_tv", "lambda_oob"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class FitReport:
    """What a fit or optimization run did, for logs and the --report flag."""

    iterations: int
    residual: float
    loss_terms: dict[str, float] = field(default_factory=dict)
    wall_time_s: float = 0.0


@dataclass(frozen=True)
class StageConfig:
    """One optimizer stage: iteration budget, step sizing, problem scale."""

    max_iters: int = 200
    step: float = 1.0
    downsample: int = 1  # native-grid shrink factor for the coarse stage
    min_step: float = 1e-10
    armijo: float = 1e-4


def _reduce(total: float, count: int, reduce: str) -> float:
    if reduce == "sum":
        return float(total)
    if reduce == "mean":
        return float(total) / max(count, 1)
    raise ValueError(f"reduce must be 'sum' or 'mean', got {reduce!r}")


def loss_raw(p: ControlLattice, pstar: ControlLattice, reduce: str = "sum") -> float:
    """L1 distance between the raw lattice and its supervision target."""
    if p.coords.shape != pstar.coords.shape:
        raise DimensionError(
            f"lattice shapes differ: {p.coords.shape} vs {pstar.coords.shape}"
        )
    diff = np.abs(p.coords - pstar.coords)
    return _reduce(diff.sum(), diff.size, reduce)


def loss_clip(p: ControlLattice, reduce: str = "sum") -> float:
    """L1 norm of the lattice after clamping to the valid sampling domain."""
    clipped = np.abs(np.clip(p.coords, -1.0, 1.0))
    return _reduce(clipped.sum(), clipped.size, reduce)


def tv(p: ControlLattice, reduce: str = "sum") -> float:
    """Anisotropic L1 total variation over lattice-neighbor differences."""
    total = 0.0
    count = 0
    for axis in range(3):
        d = np.diff(p.coords, axis=axis + 1)
        total += np.abs(d).sum()
        count += d.size
    return _reduce(total, count, reduce)


def oob(p: ControlLattice, reduce: str = "sum") -> float:
    """Penalty on coordinates exceeding [-1, 1]: sum of max(|p| - 1, 0)."""
    excess = np.maximum(np.abs(p.coords) - 1.0, 0.0)
    return _reduce(excess.sum(), excess.size, reduce)


def total_loss(
    p: ControlLattice,
    pstar: ControlLattice,
    weights: LossWeights,
    reduce: str = "sum",
) -> tuple[float, dict[str, float]]:
    """Weighted sum of all four terms plus the per-term breakdown."""
    terms = {
        "raw": loss_raw(p, pstar, reduce),
        "clip": loss_clip(p, reduce),
        "tv": tv(p, reduce),
        "oob": oob(p, reduce),
    }
    total = (
        terms["raw"]
        + weights.lambda_clip * terms["clip"]
        + weights.lambda_tv * terms["tv"]
        + weights.lambda_oob * terms["oob"]
    )
    return float(total), terms


def _tv_sum_and_grad(coords: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum-reduced TV and its subgradient (0 at exact zero differences)."""
    value = 0.0
    grad = np.zeros_like(coords)
    for axis in range(1, 4):
        d = np.diff(coords, axis=axis)
        value += np.abs(d).sum()
        s = np.sign(d)
        hi = [slice(None)] * 4
        lo = [slice(None)] * 4
        hi[axis] = slice(1, None)
        lo[axis] = slice(None, -1)
        grad[tuple(hi)] += s
        grad[tuple(lo)] -= s
    return float(value), grad


def _oob_sum_and_grad(coords: np.ndarray) -> tuple[float, np.ndarray]:
    excess = np.abs(coords) - 1.0
    outside = excess > 0.0
    value = float(excess[outside].sum()) if np.any(outside) else 0.0
    grad = np.where(outside, np.sign(coords), 0.0)
    return value, grad


def lattice_basis(lattice_dims: Dims, positions: np.ndarray) -> sp.csr_matrix:
    """Sparse trilinear interpolation matrix: rows = positions, cols = control points.

    positions are normalized coordinates; row i of B @ p_flat gives the
    upsampled lattice channel at positions[i].
    """
    lattice_dims = tuple(int(d) for d in lattice_dims)
    n = positions.shape[0]
    lo = np.empty((n, 3), dtype=np.int64)
    f = np.empty((n, 3), dtype=np.float64)
    for a, nc in enumerate(lattice_dims):
        idx = (np.clip(positions[:, a], -1.0, 1.0) + 1.0) * 0.5 * (nc - 1)
        l = np.clip(np.floor(idx).astype(np.int64), 0, nc - 2)
        lo[:, a] = l
        f[:, a] = idx - l
    dc, hc, wc = lattice_dims
    rows = np.empty(n * 8, dtype=np.int64)
    cols = np.empty(n * 8, dtype=np.int64)
    vals = np.empty(n * 8, dtype=np.float64)
    row_idx = np.arange(n, dtype=np.int64)
    k = 0
    for bd in (0, 1):
        wd = f[:, 0] if bd else 1.0 - f[:, 0]
        for bh in (0, 1):
            wh = f[:, 1] if bh else 1.0 - f[:, 1]
            for bw in (0, 1):
                ww = f[:, 2] if bw else 1.0 - f[:, 2]
                sl = slice(k * n, (k + 1) * n)
                rows[sl] = row_idx
                cols[sl] = ((lo[:, 0] + bd) * hc + (lo[:, 1] + bh)) * wc + (lo[:, 2] + bw)
                vals[sl] = wd * wh * ww
                k += 1
    ncp = dc * hc * wc
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, ncp)).tocsr()


def smoothness_matrix(lattice_dims: Dims) -> sp.csr_matrix:
    """Quadratic smoothness operator: sum over axes of D^T D on the lattice graph."""
    dc, hc, wc = (int(d) for d in lattice_dims)
    ncp = dc * hc * wc
    flat = np.arange(ncp).reshape(dc, hc, wc)
    mats = []
    for axis in range(3):
        hi = [slice(None)] * 3
        lo = [slice(None)] * 3
        hi[axis] = slice(1, None)
        lo[axis] = slice(None, -1)
        a = flat[tuple(lo)].ravel()
        b = flat[tuple(hi)].ravel()
        m = len(a)
        rows = np.repeat(np.arange(m), 2)
        cols = np.stack([a, b], axis=1).ravel()
        vals = np.tile([-1.0, 1.0], m)
        mats.append(sp.coo_matrix((vals, (rows, cols)), shape=(m, ncp)).tocsr())
    lap = sum((m.T @ m for m in mats), sp.csr_matrix((ncp, ncp)))
    return lap.tocsr()


def fit_lattice(
    grid: DenseGrid,
    mask: np.ndarray,
    lattice_dims: Dims,
    lambda_tv: float = 0.0,
    reduce: str = "sum",
) -> tuple[ControlLattice, FitReport]:
    """Fit a sparse lattice to a dense correspondence grid (masked least squares).

    Solves the smooth L2 data term with quadratic smoothness per coordinate
    channel (channels decouple) via normal equations, then reports the L1
    objective. A singular system (uncovered lattice cells with lambda_tv = 0)
    raises FitRankError.
    """
    t0 = time.perf_counter()
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != grid.dims:
        raise DimensionError(f"mask shape {mask.shape} must match grid dims {grid.dims}")
    flat_mask = mask.ravel()
    if not np.any(flat_mask):
        raise FitRankError("mask covers no voxels; nothing to fit")
    positions = voxel_center_grid(grid.dims).reshape(-1, 3)[flat_mask]
    targets = grid.coords.reshape(-1, 3)[flat_mask]
    basis = lattice_basis(lattice_dims, positions)
    ata = (basis.T @ basis).toarray()
    system = ata + float(lambda_tv) * smoothness_matrix(lattice_dims).toarray()
    try:
        factor = cho_factor(system)
    except np.linalg.LinAlgError as exc:
        raise FitRankError(
            "normal equations are singular (some lattice cells have no masked "
            "voxels); refit with lambda_tv > 0"
        ) from exc
    rhs = basis.T @ targets  # (ncp, 3)
    solution = cho_solve(factor, rhs)
    lat = ControlLattice(solution.T.reshape((3,) + tuple(int(d) for d in lattice_dims)))
    fitted = basis @ solution
    abs_err = np.abs(fitted - targets)
    residual = float(abs_err.mean())
    terms = {
        "data_l1": _reduce(abs_err.sum(), abs_err.size, reduce),
        "tv": tv(lat, reduce),
        "objective_l1": float(abs_err.sum()) + float(lambda_tv) * tv(lat),
    }
    report = FitReport(1, residual, terms, time.perf_counter() - t0)
    return lat, report


def clip_extremes(p: ControlLattice, tau: float) -> ControlLattice:
    """Radially scale back control points displaced more than tau from identity."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    ident = identity_lattice(p.dims).coords
    disp = p.coords - ident
    mag = np.sqrt((disp**2).sum(axis=0))
    scale = np.where(mag > tau, tau / np.maximum(mag, 1e-300), 1.0)
    return ControlLattice(ident + disp * scale[np.newaxis])


def make_warp_objective(
    canonical: Volume,
    native: Volume,
    weights: LossWeights,
    lattice_dims: Dims,
):
    """Objective closure: lattice coords -> (image MSE + tv + oob, gradient).

    The image term is the mean squared intensity error between the native
    volume and the canonical volume warped through the upsampled lattice;
    gradients flow analytically through sampling and upsampling. The
    clipped-consistency weight plays no role here (there is no supervision
    target inside the objective).
    """
    positions = voxel_center_grid(native.dims).reshape(-1, 3)
    basis = lattice_basis(lattice_dims, positions)
    basis_t = basis.T.tocsr()
    target = native.data.astype(np.float64).ravel()
    nvox = target.size

    def objective(coords: np.ndarray) -> tuple[float, np.ndarray]:
        flat = coords.reshape(3, -1)
        grid_pts = basis @ flat.T  # (nvox, 3)
        vals, dval_dc = sample_grid_with_grad(canonical, grid_pts)
        diff = vals - target
        mse = float((diff @ diff) / nvox)
        dmse_dg = (2.0 / nvox) * diff[:, np.newaxis] * dval_dc
        grad = np.empty_like(coords)
        for a in range(3):
            grad[a] = (basis_t @ dmse_dg[:, a]).reshape(coords.shape[1:])
        value = mse
        if weights.lambda_tv > 0:
            tv_val, tv_g = _tv_sum_and_grad(coords)
            value += weights.lambda_tv * tv_val
            grad += weights.lambda_tv * tv_g
        if weights.lambda_oob > 0:
            oob_val, oob_g = _oob_sum_and_grad(coords)
            value += weights.lambda_oob * oob_val
            grad += weights.lambda_oob * oob_g
        return value, grad

    return objective


def _descend(objective, x0: np.ndarray, cfg: StageConfig) -> tuple[np.ndarray, float, int]:
    """Monotone backtracking gradient descent; raises on non-finite loss."""
    x = x0.copy()
    f, g = objective(x)
    if not np.isfinite(f):
        raise DivergenceError("objective non-finite at the starting point", x0)
    step = cfg.step
    iters = 0
    for _ in range(cfg.max_iters):
        gnorm2 = float((g * g).sum())
        if gnorm2 == 0.0:
            break
        trial = step
        accepted = False
        while trial >= cfg.min_step:
            xn = x - trial * g
            fn, gn = objective(xn)
            if not np.isfinite(fn):
                raise DivergenceError("objective diverged during line search", x)
            if fn <= f - cfg.armijo * trial * gnorm2:
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            break
        x, f, g = xn, fn, gn
        step = min(trial * 2.0, cfg.step)
        iters += 1
    return x, f, iters


def optimize_lattice(
    canonical: Volume,
    native: Volume,
    p0: ControlLattice,
    stages: tuple[StageConfig, StageConfig],
    weights: LossWeights,
) -> tuple[ControlLattice, FitReport]:
    """Coarse-then-fine residual optimization of the deformation lattice.

    Stage 1 descends on a downsampled native grid; stage 2 refines at full
    resolution with the coarse residual frozen. Returns the composed raw
    lattice (never clamped) and a report with initial/final image MSE.
    """
    t0 = time.perf_counter()
    coarse_cfg, fine_cfg = stages
    full_obj = make_warp_objective(canonical, native, LossWeights(0.0, 0.0, 0.0), p0.dims)

    def full_mse(coords):
        return full_obj(coords)[0]

    mse_initial = full_mse(p0.coords)

    if coarse_cfg.downsample > 1:
        small_dims = tuple(max(2, d // coarse_cfg.downsample) for d in native.dims)
        native_small = resample(native, small_dims)
    else:
        native_small = native
    obj_coarse = make_warp_objective(canonical, native_small, weights, p0.dims)
    x_coarse, _, it1 = _descend(obj_coarse, p0.coords, coarse_cfg)

    obj_fine = make_warp_objective(canonical, native, weights, p0.dims)
    x_fine, f_fine, it2 = _descend(obj_fine, x_coarse, fine_cfg)

    dp_coarse = x_coarse - p0.coords
    dp_fine = x_fine - x_coarse
    _, final = compose_coarse_fine(p0, dp_coarse, dp_fine)

    mse_final = full_mse(final.coords)
    tv_val = tv(final)
    oob_val = oob(final)
    terms = {
        "mse_initial": mse_initial,
        "mse_final": mse_final,
        "tv": tv_val,
        "oob": oob_val,
        "objective_final": f_fine,
    }
    report = FitReport(it1 + it2, mse_final, terms, time.perf_counter() - t0)
    return final, report


def loss_kink_mask(coords: np.ndarray, pstar: np.ndarray | None = None) -> np.ndarray:
    """Entries where the L1 loss stack is non-smooth (excluded from FD checks).

    Marks participants of zero TV differences, entries at exactly 0 or +-1
    (clip / out-of-bound kinks), and entries equal to the supervision target.
    """
    kink = np.zeros(coords.shape, dtype=bool)
    for axis in range(1, 4):
        d = np.diff(coords, axis=axis)
        z = d == 0.0
        hi = [slice(None)] * 4
        lo = [slice(None)] * 4
        hi[axis] = slice(1, None)
        lo[axis] = slice(None, -1)
        kink[tuple(hi)] |= z
        kink[tuple(lo)] |= z
    kink |= coords == 0.0
    kink |= np.abs(coords) == 1.0
    if pstar is not None:
        kink |= coords == pstar
    return kink


def finite_diff_check(
    value_and_grad,
    coords: np.ndarray,
    epsilon: float,
    num_entries: int = 50,
    seed: int = 0,
    eligible: np.ndarray | None = None,
) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Samples num_entries random coordinate entries (restricted to the
    eligible mask when given); the relative-error denominator is
    max(|analytic|, 1e-8).
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    flat = coords.ravel()
    if eligible is None:
        candidates = np.arange(flat.size)
    else:
        candidates = np.flatnonzero(np.asarray(eligible, dtype=bool).ravel())
    rng = np.random.default_rng(seed)
    take = min(num_entries, candidates.size)
    picks = rng.choice(candidates, size=take, replace=False)
    _, grad = value_and_grad(coords)
    gflat = grad.ravel()
    worst = 0.0
    for idx in picks:
        bumped = flat.copy()
        bumped[idx] += epsilon
        f_plus, _ = value_and_grad(bumped.reshape(coords.shape))
        bumped[idx] -= 2.0 * epsilon
        f_minus, _ = value_and_grad(bumped.reshape(coords.shape))
        fd = (f_plus - f_minus) / (2.0 * epsilon)
        rel = abs(fd - gflat[idx]) / max(abs(gflat[idx]), 1e-8)
        worst = max(worst, rel)
    return worst


def run_supervision(
    curve: ArchCurve,
    cfg: CprConfig,
    native_dims: Dims,
    lattice_dims: Dims,
    lambda_tv: float,
    clip_tau: float,
) -> tuple[ControlLattice, ControlLattice, DenseGrid, np.ndarray, FitReport]:
    """Supervision-lattice generation, end to end.

    Steps: (1) analytic dense correspondence between canonical and native
    grids; (2)+(3) masked lattice fit with quadratic smoothness; (4) clip
    extreme control-point displacements; (5) hand both lattices back for
    caching. Returns (pstar, pstar_clip, grid, mask, report).
    """
    grid, mask = inverse_map_grid(curve, cfg, native_dims)
    pstar, report = fit_lattice(grid, mask, lattice_dims, lambda_tv)
    pstar_clip = clip_extremes(pstar, clip_tau)
    return pstar, pstar_clip, grid, mask, report
