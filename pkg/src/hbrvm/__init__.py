"""Hierarchical Bayesian relevance vector machine with global-local shrinkage.

Kernel construction and spectral checks, local-variance priors, a Gibbs
sampler, a brute-force grid posterior for tiny problems, and a Monte-Carlo
bench for posterior contraction rates.
"""

from .errors import (
    ConfigError,
    HBRVMError,
    InsufficientDataError,
    InvalidInputError,
    KernelConstructionError,
    NumericalError,
    OracleRangeError,
)
from .gibbs import ChainConfig, ChainSummary, Hyperparams, closed_form_point_mass, run_chain
from .kernels import (
    KernelSpec,
    build_kernel,
    check_gaussian_separation,
    check_near_orthogonality,
    generate_design,
    spectral_certificate,
)
from .oracle import GridSpec, oracle_posterior
from .priors import (
    BetaPrime,
    Gamma,
    GlobalSchedule,
    InverseGamma,
    InverseGaussian,
    PointMass,
    classify_moments,
    parse_prior,
    tau_squared,
)

__version__ = "0.1.0"
