"""Projection pursuit density factorization by relative-entropy criteria."""

from .distributions import (
    Direction,
    EllipticalDensity,
    GumbelDensity1D,
    ProductDensity,
    angle_between,
    canonical_direction,
    gaussian,
    moment_match_instrumental,
    principal_angle,
    simulation1_density,
    simulation2_density,
    simulation3_sample,
)
from .divergence import (
    CriterionContext,
    CriterionValue,
    build_context,
    empirical_K_huber,
    empirical_K_ours,
    kl_analytic,
    phi,
)
from .kde import KernelEstimate, bandwidth_rule
from .optimizer import AnnealConfig, OptResult, anneal, polish
from .pursuit import (
    PursuitAborted,
    PursuitConfig,
    PursuitReport,
    StopTestResult,
    TransformedDensity,
    kl_to_truth,
    prepare_context,
    run_pursuit,
    sample_transformed,
    stop_test,
    update_g,
)

__all__ = [name for name in dir() if not name.startswith("_")]
