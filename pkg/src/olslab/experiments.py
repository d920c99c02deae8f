"""Seeded Monte Carlo experiments around the OLS estimator.

Every trial seed is ``derive_seed(master_seed, t, trial_index)``, so batches
are pure functions of their configuration and independent of execution order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import ValidationError
from .estimator import estimation_error, ols, self_normalized_stat
from .gramians import gramian_sum, minimal_horizon, series_bound
from .lti import SystemSpec, Trajectory, derive_seed, simulate_many
from .spectrum import isometry_defect, spectrum_containment

__all__ = [
    "CalibrationResult",
    "DecayFit",
    "ExperimentConfig",
    "ProofDiagnostics",
    "TrialBatch",
    "calibrate_constant",
    "decay_experiment",
    "order_statistic_quantile",
    "pac_experiment",
    "proof_diagnostics",
    "spectrum_coverage",
    "wilson_interval",
]

BATCH = 256
CALIBRATION_TAG = 0xCA1B


def wilson_interval(failures: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(int(failures), int(n)).proportion_ci(confidence, method="wilson")
    return max(0.0, float(ci.low)), min(1.0, float(ci.high))


def order_statistic_quantile(values, q: float) -> float:
    """The ``ceil(q n)``-th smallest value (1-based)."""
    v = np.sort(np.asarray(values, dtype=float))
    k = max(1, math.ceil(q * len(v) - 1e-9))
    return float(v[k - 1])


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    spec: SystemSpec
    t_grid: tuple
    epsilon: float
    delta: float
    n_trials: int
    master_seed: int = 1729
    constant_c: float = 1.0
    K: Optional[float] = None

    def __post_init__(self):
        if isinstance(self.n_trials, bool) or int(self.n_trials) != self.n_trials or self.n_trials < 1:
            raise ValidationError(f"n_trials must be a positive integer, got {self.n_trials!r}")
        grid = tuple(int(t) for t in self.t_grid)
        if not grid or any(t < 1 for t in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValidationError(f"t_grid must be a strictly increasing list of positive horizons, got {list(grid)}")
        object.__setattr__(self, "t_grid", grid)
        for name in ("epsilon", "delta"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValidationError(f"{name} must lie in (0, 1), got {v}")
        if not self.constant_c > 0:
            raise ValidationError(f"constant_c must be positive, got {self.constant_c}")

    @property
    def noise_psi2(self) -> float:
        return self.spec.noise.psi2 if self.K is None else float(self.K)

    def to_dict(self) -> dict:
        return {
            "system": self.spec.to_dict(),
            "t_grid": list(self.t_grid),
            "epsilon": self.epsilon,
            "delta": self.delta,
            "n_trials": self.n_trials,
            "master_seed": self.master_seed,
            "constant_c": self.constant_c,
            "K": self.K,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return cls(
            spec=SystemSpec.from_dict(data["system"]),
            t_grid=tuple(data["t_grid"]),
            epsilon=float(data["epsilon"]),
            delta=float(data["delta"]),
            n_trials=data["n_trials"],
            master_seed=int(data.get("master_seed", 1729)),
            constant_c=float(data.get("constant_c", 1.0)),
            K=data.get("K"),
        )


def trial_seeds(master_seed: int, t: int, n: int) -> list[int]:
    return [derive_seed(master_seed, t, i) for i in range(n)]


def _batched(spec: SystemSpec, t: int, seeds: Sequence[int]):
    for start in range(0, len(seeds), BATCH):
        yield from simulate_many(spec, t, seeds[start : start + BATCH])


@dataclass(frozen=True)
class PathDiagnostics:
    """Intermediate quantities of the two-event argument along one path."""

    t: int
    d: int
    epsilon: float
    delta: float
    K: float
    c: float
    error: float
    degenerate: bool
    lambda_min: float
    inv_whitener_norm_sq: float
    defect: float
    event_isometry: bool
    beta: float
    beta_sq_identity_residual: float
    selfnorm_value: float
    selfnorm_threshold: float
    selfnorm_below_threshold: bool
    selfnorm_threshold_max: float
    condition13: bool
    condition13_printed: bool
    pathwise_error_bound: Optional[float]
    gamma_norm: float
    tau1: float
    tau2: float
    final_condition: bool
    premises: bool
    implication_holds: bool

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PathDiagnostics":
        return cls(**data)


ProofDiagnostics = PathDiagnostics


class _PathContext:
    """Per-(system, horizon) constants shared by every path of a batch."""

    def __init__(self, spec: SystemSpec, t: int, epsilon: float, delta: float, K: float, c: float,
                 gamma_norm: Optional[float] = None):
        self.spec, self.t, self.epsilon, self.delta, self.K, self.c = spec, t, epsilon, delta, K, c
        d = spec.d
        g = gramian_sum(spec.A, t)
        self.gramian = g
        self.S = 0.5 * g.gramian_sum
        self.inv_m_sq = 1.0 / g.whitener_norm**2
        self.beta = math.sqrt(float(np.linalg.eigvalsh(self.S)[0]))
        self.beta_residual = abs(self.beta**2 - 0.5 / g.whitener_norm**2)
        # Under the isometry event X^T X <= 3S, so det((X^T X + S) S^{-1}) <= 4^d.
        L = math.log(2.0 / delta) + d * math.log(10.0)
        self.threshold_max = 4.0 * math.sqrt(c) * K * math.sqrt(L)
        self.condition13 = epsilon >= math.sqrt(2.0) * self.threshold_max / self.beta
        self.condition13_printed = self.inv_m_sq >= 16.0 * c * K**2 / epsilon**2 * L
        self.gamma_norm = series_bound(spec.A) if gamma_norm is None else float(gamma_norm)
        self.tau1 = 16.0 * K**4 * self.gamma_norm**2 / c * (math.log(4.0 / delta) + d * math.log(9.0))
        self.tau2 = 16.0 * c * K**2 / epsilon**2 * L

    def diagnose(self, traj: Trajectory) -> PathDiagnostics:
        A = self.spec.A
        est = ols(traj)
        error = estimation_error(est.A_hat, A)
        defect = isometry_defect(traj.X, self.gramian.whitener).defect
        e2 = defect <= 0.5
        # self-normalized bound applied at level delta/2
        sn = self_normalized_stat(traj, self.S, self.delta / 2.0, self.K, self.c)
        below = sn.value <= sn.bound
        premises = bool(e2 and below and self.condition13)
        return PathDiagnostics(
            t=self.t,
            d=self.spec.d,
            epsilon=self.epsilon,
            delta=self.delta,
            K=self.K,
            c=self.c,
            error=error,
            degenerate=est.degenerate,
            lambda_min=self.gramian.lambda_min,
            inv_whitener_norm_sq=self.inv_m_sq,
            defect=defect,
            event_isometry=e2,
            beta=self.beta,
            beta_sq_identity_residual=self.beta_residual,
            selfnorm_value=sn.value,
            selfnorm_threshold=sn.bound,
            selfnorm_below_threshold=below,
            selfnorm_threshold_max=self.threshold_max,
            condition13=self.condition13,
            condition13_printed=self.condition13_printed,
            pathwise_error_bound=math.sqrt(2.0) * sn.value / self.beta if e2 else None,
            gamma_norm=self.gamma_norm,
            tau1=self.tau1,
            tau2=self.tau2,
            final_condition=self.inv_m_sq >= max(self.tau1, self.tau2),
            premises=premises,
            implication_holds=(not premises) or error <= self.epsilon,
        )


def proof_diagnostics(
    traj: Trajectory,
    spec: SystemSpec,
    epsilon: float,
    delta: float,
    K: Optional[float] = None,
    c: float = 1.0,
    gamma_norm: Optional[float] = None,
) -> PathDiagnostics:
    """Every intermediate of the two-event error argument, evaluated on one path.

    The isometry event is ``||(XM)^T XM - I|| <= 1/2``; with ``S = M^{-2}/2``
    and ``beta = sqrt(s_d(S))`` it gives ``||A_hat - A|| <= sqrt2 V / beta`` for
    ``V = ||E^T X (X^T X + S)^{-1/2}||``.  ``condition13`` is
    ``eps >= sqrt2 * 4 sqrt(c) K sqrt(log(2/delta) + d log 10) / beta``; when
    it holds together with both events the realized error cannot exceed
    ``eps``.  ``tau1``/``tau2`` use ``c1 = c2 = c`` and ``gamma_norm``
    (default ``J(A)``) for the block-Toeplitz norm.
    """
    if traj.d != spec.d:
        raise ValidationError("trajectory and system dimensions differ")
    K = spec.noise.psi2 if K is None else float(K)
    return _PathContext(spec, traj.t, epsilon, delta, K, c, gamma_norm).diagnose(traj)


@dataclass(frozen=True)
class TrialBatch:
    t: int
    n_trials: int
    epsilon: float
    delta: float
    master_seed: int
    seeds: list
    errors: list
    e2_indicator: list
    selfnorm_values: list
    selfnorm_thresholds: list
    degenerate: list
    premises: list
    failures: int
    failure_frequency: float
    wilson_low: float
    wilson_high: float
    quantiles: dict
    e2_frequency: float
    premises_count: int
    soundness_counterexamples: int
    condition13: bool

    @property
    def wilson_half_width(self) -> float:
        return 0.5 * (self.wilson_high - self.wilson_low)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrialBatch":
        return cls(**data)

    def csv_rows(self):
        for i in range(self.n_trials):
            yield {
                "trial": i,
                "seed": self.seeds[i],
                "error": self.errors[i],
                "e2_indicator": int(self.e2_indicator[i]),
                "selfnorm_value": self.selfnorm_values[i],
            }


def pac_experiment(cfg: ExperimentConfig, t: int, master_seed: Optional[int] = None) -> TrialBatch:
    """Run ``cfg.n_trials`` independent trajectories of horizon ``t``.

    A trial fails when ``||A_hat - A|| > eps`` or its Gram matrix is rank
    deficient.  Each trial also records the isometry event, the
    self-normalized statistic with ``S = M^{-2}/2``, and whether the
    two-event premises held (in which case the error must be within ``eps``).
    """
    seed0 = cfg.master_seed if master_seed is None else int(master_seed)
    ctx = _PathContext(cfg.spec, int(t), cfg.epsilon, cfg.delta, cfg.noise_psi2, cfg.constant_c)
    seeds = trial_seeds(seed0, t, cfg.n_trials)
    diags = [ctx.diagnose(traj) for traj in _batched(cfg.spec, t, seeds)]
    errors = [p.error for p in diags]
    fails = [p.error > cfg.epsilon or p.degenerate for p in diags]
    k = int(sum(fails))
    lo, hi = wilson_interval(k, cfg.n_trials)
    return TrialBatch(
        t=int(t),
        n_trials=cfg.n_trials,
        epsilon=cfg.epsilon,
        delta=cfg.delta,
        master_seed=seed0,
        seeds=seeds,
        errors=errors,
        e2_indicator=[p.event_isometry for p in diags],
        selfnorm_values=[p.selfnorm_value for p in diags],
        selfnorm_thresholds=[p.selfnorm_threshold for p in diags],
        degenerate=[p.degenerate for p in diags],
        premises=[p.premises for p in diags],
        failures=k,
        failure_frequency=k / cfg.n_trials,
        wilson_low=lo,
        wilson_high=hi,
        quantiles={
            "median": order_statistic_quantile(errors, 0.5),
            "q_1_minus_delta": order_statistic_quantile(errors, 1.0 - cfg.delta),
            "max": max(errors),
        },
        e2_frequency=sum(p.event_isometry for p in diags) / cfg.n_trials,
        premises_count=sum(p.premises for p in diags),
        soundness_counterexamples=sum(not p.implication_holds for p in diags),
        condition13=ctx.condition13,
    )


def _trial_errors(spec: SystemSpec, t: int, seeds: Sequence[int]) -> np.ndarray:
    out = []
    for traj in _batched(spec, t, seeds):
        est = ols(traj)
        out.append(math.inf if est.degenerate else estimation_error(est.A_hat, spec.A))
    return np.array(out)


@dataclass(frozen=True)
class DecayFit:
    t: list
    lambda_min: list
    median: list
    quantile: list
    implied_constant: list
    bound_rhs: list
    slope: float
    intercept: float
    c_hat: float
    constant_ratio: float
    delta: float
    n_trials: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DecayFit":
        return cls(**data)

    def csv_rows(self):
        for i in range(len(self.t)):
            yield {
                "t": self.t[i],
                "lambda_min": self.lambda_min[i],
                "median": self.median[i],
                "quantile": self.quantile[i],
                "bound_rhs": self.bound_rhs[i],
            }


def decay_experiment(cfg: ExperimentConfig) -> DecayFit:
    """Error quantiles across horizons and their log-log slope against ``lambda_min``.

    The quantile of order ``1 - delta`` is fitted; ``implied_constant`` is
    ``quantile * sqrt(lambda_min / (log(1/delta) + d))`` and ``c_hat`` its
    maximum over the grid.
    """
    grid = cfg.t_grid
    if len(grid) < 3:
        raise ValidationError(f"decay fit needs at least 3 horizons, got {len(grid)}")
    if grid[-1] < 10 * grid[0]:
        raise ValidationError("t_grid must span at least one decade")
    log_term = math.log(1.0 / cfg.delta) + cfg.spec.d
    lam, med, qs, implied, rhs = [], [], [], [], []
    for t in grid:
        lam_t = gramian_sum(cfg.spec.A, t).lambda_min
        errs = _trial_errors(cfg.spec, t, trial_seeds(cfg.master_seed, t, cfg.n_trials))
        q = order_statistic_quantile(errs, 1.0 - cfg.delta)
        lam.append(lam_t)
        med.append(order_statistic_quantile(errs, 0.5))
        qs.append(q)
        implied.append(q * math.sqrt(lam_t / log_term))
        rhs.append(cfg.constant_c * math.sqrt(log_term / lam_t))
    slope, intercept = np.polyfit(np.log(lam), np.log(qs), 1)
    return DecayFit(
        t=list(grid),
        lambda_min=lam,
        median=med,
        quantile=qs,
        implied_constant=implied,
        bound_rhs=rhs,
        slope=float(slope),
        intercept=float(intercept),
        c_hat=max(implied),
        constant_ratio=max(implied) / min(implied),
        delta=cfg.delta,
        n_trials=cfg.n_trials,
    )


def spectrum_coverage(cfg: ExperimentConfig, t: int, epsilon: float, K: Optional[float] = None) -> float:
    """Fraction of trials with ``(1-K^2 eps)/||M|| <= s_d(X) <= s_1(X) <= (1+K^2 eps)/s_d(M)``."""
    K = cfg.noise_psi2 if K is None else float(K)
    M = gramian_sum(cfg.spec.A, t).whitener
    seeds = trial_seeds(cfg.master_seed, t, cfg.n_trials)
    hits = sum(spectrum_containment(traj.X, M, epsilon, K) for traj in _batched(cfg.spec, t, seeds))
    return hits / cfg.n_trials


@dataclass(frozen=True)
class CalibrationResult:
    c_hat: Optional[float]
    bracket_low: Optional[float]
    bracket_high: Optional[float]
    converged: bool
    epsilon: float
    delta: float
    n_probe_trials: int
    probes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationResult":
        return cls(**data)


def _probe(specs, c, epsilon, delta, n, master_seed, t_max):
    horizons, freqs = [], []
    for j, spec in enumerate(specs):
        t = minimal_horizon(spec.A, epsilon, delta, c, t_max)
        seeds = [derive_seed(master_seed, CALIBRATION_TAG, j, t, i) for i in range(n)]
        errs = _trial_errors(spec, t, seeds)
        horizons.append(t)
        freqs.append(float(np.mean(errs > epsilon)))
    return horizons, freqs


def calibrate_constant(
    specs: Sequence[SystemSpec],
    epsilon: float,
    delta: float,
    n_probe_trials: int = 20,
    master_seed: int = 1729,
    c_range: tuple = (2.0**-6, 2.0**6),
    steps: int = 12,
    t_max: int = 10_000_000,
) -> CalibrationResult:
    """Smallest constant whose implied minimal horizons meet the failure target on every system.

    Bisection on ``log2 c`` over ``c_range``; each probe runs
    ``n_probe_trials`` fresh trials per system at the minimal horizon for
    that constant and passes when every empirical failure frequency is at
    most ``delta``.  If even the upper end fails the result is unconverged
    and reports the bracket ``(c_max, None)``.
    """
    specs = list(specs)
    if len(specs) < 3:
        raise ValidationError(f"calibration needs a family of at least 3 systems, got {len(specs)}")
    if isinstance(n_probe_trials, bool) or int(n_probe_trials) != n_probe_trials or n_probe_trials < 1:
        raise ValidationError(f"n_probe_trials must be a positive integer, got {n_probe_trials!r}")
    if not (0 < epsilon < 1 and 0 < delta < 1):
        raise ValidationError("epsilon and delta must lie in (0, 1)")
    lo, hi = math.log2(c_range[0]), math.log2(c_range[1])
    probes = []

    def passes(log_c):
        c = 2.0**log_c
        horizons, freqs = _probe(specs, c, epsilon, delta, int(n_probe_trials), master_seed, t_max)
        ok = all(f <= delta for f in freqs)
        probes.append({"c": c, "minimal_t": horizons, "failure_frequency": freqs, "pass": ok})
        return ok

    common = dict(epsilon=epsilon, delta=delta, n_probe_trials=int(n_probe_trials), probes=probes)
    if not passes(hi):
        return CalibrationResult(None, 2.0**hi, None, False, **common)
    if passes(lo):
        return CalibrationResult(2.0**lo, None, 2.0**lo, True, **common)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if passes(mid):
            hi = mid
        else:
            lo = mid
    return CalibrationResult(2.0**hi, 2.0**lo, 2.0**hi, True, **common)
