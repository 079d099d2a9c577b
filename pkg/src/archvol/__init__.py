"""Arch-curve-guided volumetric flattening, lattice deformation, and evaluation."""

from .arch import ArchCurve, ParabolaParams, build_curve, fit_parabola, point_at, project_point
from .cpr import CprConfig, arch_prior, canonical_coords_of, flatten, forward_map, inverse_map_grid, synth_panorama
from .errors import (
    ArchVolError,
    CurveError,
    DimensionError,
    DivergenceError,
    FitRankError,
    PhantomSpecError,
    RangeError,
    SchemaError,
    VolumeFormatError,
)
from .fitting import (
    FitReport,
    LossWeights,
    StageConfig,
    clip_extremes,
    finite_diff_check,
    fit_lattice,
    loss_clip,
    loss_raw,
    make_warp_objective,
    oob,
    optimize_lattice,
    run_supervision,
    total_loss,
    tv,
)
from .lattice import (
    ControlLattice,
    DenseGrid,
    clip_grid,
    clip_lattice,
    compose_coarse_fine,
    identity_grid,
    identity_lattice,
    is_identity,
    upsample_lattice,
    warp,
)
from .metrics import BinaryMask, binarize_shared_threshold, dsc, hd95, psnr, ssim3d
from .phantom import PhantomSpec, make_phantom
from .volume import (
    Volume,
    in_domain,
    index_to_norm,
    norm_to_index,
    normalize_minmax,
    resample,
    sample_grid,
    sample_trilinear,
    voxel_center_grid,
)

__version__ = "0.1.0"
