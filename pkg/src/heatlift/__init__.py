"""Numerical laboratory for spatial rough-path lifts of the periodic
stochastic heat field: exact group arithmetic, distribution-exact
spectral sampling, dual covariance oracles, dyadic lift convergence and
large-deviation experiments."""

from .group import (
    DimensionMismatchError,
    GroupElement,
    NonGeometricError,
    dilate,
    group_dist,
    hom_norm,
    inverse,
    multiply,
    random_geometric,
    unit,
)
from .sheets import (
    EmbeddingRatioReport,
    GridMismatchError,
    PathSlice,
    RoughSheet,
    RoughSlice,
    besov_norm,
    dilate_sheet,
    dist_infty,
    embedding_ratio,
    holder_norm,
    increment,
    lift_piecewise_linear,
    load_sheet,
    save_sheet,
    spacetime_besov_norm,
)
from .sampler import (
    FieldSample,
    SpectralConfig,
    basis_eval,
    ou_step,
    sample_field,
    sample_slice_marginal,
    truncation_residual,
)
from .covariance import (
    BoundScanReport,
    bound_scan,
    cov,
    dist_s1,
    dual_method_check,
    rect_var,
    second_diff_cov,
)
from .dyadic import (
    ConvergenceTable,
    convergence_study,
    level2_telescope,
    lift_level,
    polygonal_restrict,
    validate_besov_params,
)
from .ldp import (
    CMControl,
    CameronMartinPath,
    ChaosReport,
    ModeControl,
    SchilderReport,
    cameron_martin_path,
    chaos_moment_ratio,
    cm_lift_uniform_convergence,
    cm_regularity_check,
    rate_function,
    schilder_point_check,
    tail_probability,
)

__version__ = "0.1.0"
