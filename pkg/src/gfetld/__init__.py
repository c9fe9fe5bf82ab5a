"""Gradient-free ensemble transform Langevin dynamics for MMD-Bayes posteriors."""
from .baselines import (
    GridPosterior,
    conjugate_gaussian_posterior,
    grid_posterior_gaussian,
    grid_posterior_uniform,
    rmse,
)
from .ensemble import (
    EnsembleStats,
    affine_transform,
    cross_covariance,
    cross_covariances,
    ensemble_covariance,
    ensemble_mean,
    ensemble_stats,
    generalized_sqrt,
)
from .estimators import GFETLDSampler, MinimumMMDEstimator
from .exceptions import (
    CapabilityError,
    ConfigError,
    DegenerateDataError,
    DivergenceError,
    SingularMatrixError,
)
from .kernel import (
    KernelSpec,
    eval_kernel,
    kernel_gradient_x,
    median_heuristic_bandwidth,
    mmd2_unbiased,
    mmd2_vstat,
)
from .models import (
    GaussianLocationModel,
    GenerativeModel,
    Lorenz96Config,
    Lorenz96Params,
    StochasticLorenz96Model,
    UniformLocationModel,
    contaminate,
    get_model,
    simulate_lorenz96,
)
from .sampler import (
    ChainResult,
    GaussianPrior,
    SamplerConfig,
    gf_etld_step,
    grad_mmd2_exact,
    gradient_etld_step,
    minimum_mmd_estimate,
    mmd_drift_g,
    run_chain,
)

__version__ = "0.1.0"
