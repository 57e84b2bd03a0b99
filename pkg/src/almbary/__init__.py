"""Robust static asset-liability portfolios under model uncertainty.

The package aggregates a set of candidate Gaussian market models into
their Wasserstein barycenter and solves the resulting mean-variance
surplus problem in closed form.
"""

from .barycenter import BarycenterResult, PriorSet, barycenter, frechet_variance
from .errors import (
    AlmbaryError,
    ExperimentError,
    InfeasibleError,
    ModelError,
    NumericalError,
    SolverError,
    ValidationError,
)
from .experiment import (
    CellSummary,
    ExperimentConfig,
    emit_tables,
    run_cell,
    run_experiment,
    run_true_model,
)
from .gaussian import GaussianModel, psd_sqrt, sample, w2_distance_sq
from .market import (
    AssetLawConfig,
    Correlations,
    LiabilityParams,
    MarketParams,
    RateParams,
    StockParams,
    build_asset_law,
    build_joint_law,
    time_factors,
)
from .portfolio import (
    MomentBundle,
    PortfolioSolution,
    ProblemSpec,
    evaluate_portfolio,
    moments_analytic,
    moments_mc,
    solve_portfolio,
)
from .priors import BlockBounds, PerturbationSpec, nearest_correlation, perturb, to_prior_set

__version__ = "0.1.0"

__all__ = [
    "AlmbaryError",
    "AssetLawConfig",
    "BarycenterResult",
    "BlockBounds",
    "CellSummary",
    "Correlations",
    "ExperimentConfig",
    "ExperimentError",
    "GaussianModel",
    "InfeasibleError",
    "LiabilityParams",
    "MarketParams",
    "ModelError",
    "MomentBundle",
    "NumericalError",
    "PerturbationSpec",
    "PortfolioSolution",
    "PriorSet",
    "ProblemSpec",
    "RateParams",
    "SolverError",
    "StockParams",
    "ValidationError",
    "barycenter",
    "build_asset_law",
    "build_joint_law",
    "emit_tables",
    "evaluate_portfolio",
    "frechet_variance",
    "moments_analytic",
    "moments_mc",
    "nearest_correlation",
    "perturb",
    "psd_sqrt",
    "run_cell",
    "run_experiment",
    "run_true_model",
    "sample",
    "solve_portfolio",
    "time_factors",
    "to_prior_set",
    "w2_distance_sq",
]
