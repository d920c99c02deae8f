"""Finite-time identification of stable LTI systems by ordinary least squares."""

from .errors import CapacityError, InternalError, NonConvergenceError, ValidationError
from .estimator import OlsEstimate, SelfNormStat, error_identity_check, estimation_error, ols, self_normalized_stat
from .experiments import (
    CalibrationResult,
    DecayFit,
    ExperimentConfig,
    TrialBatch,
    calibrate_constant,
    decay_experiment,
    pac_experiment,
    proof_diagnostics,
    spectrum_coverage,
)
from .gramians import (
    BoundReport,
    GramianSummary,
    ToeplitzInfo,
    evaluate_conditions,
    finite_gramian,
    gramian_sum,
    minimal_horizon,
    series_bound,
    toeplitz_norm_explicit,
    toeplitz_norm_symbol,
)
from .lti import NoiseFamily, NoiseKind, SystemSpec, Trajectory, psi2_norm, simulate, spectral_radius
from .spectrum import (
    IsometryReport,
    SphereNet,
    build_net,
    chaos_statistic,
    hw_tail_estimate,
    isometry_defect,
    net_opnorm_bound,
)

__version__ = "0.1.0"
