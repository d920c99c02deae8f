"""Deterministic, system-dependent quantities entering the finite-time bounds.

Covers the finite-time controllability Gramians and their sum, the whitener
``M = (sum_{s<t} Gamma_s(A))^{-1/2}``, the norm of the truncated block-Toeplitz
matrix (explicitly, through its symbol, and through the horizon-free series
``J(A) = sum_s ||A^s||``), and the evaluated sample-size conditions.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from scipy import optimize

from .errors import CapacityError, InternalError, NonConvergenceError, ValidationError
from .lti import NoiseFamily, NoiseKind, as_matrix, spectral_radius

__all__ = [
    "BoundReport",
    "GramianSummary",
    "SeriesBound",
    "SymbolBound",
    "ToeplitzInfo",
    "evaluate_conditions",
    "finite_gramian",
    "gramian_sum",
    "inv_sqrt_psd",
    "minimal_horizon",
    "required_lambda_min",
    "series_bound",
    "series_bound_details",
    "toeplitz_info",
    "toeplitz_matrix",
    "toeplitz_norm_explicit",
    "toeplitz_norm_symbol",
    "toeplitz_symbol_details",
]

TOEPLITZ_CAP = 2000
EIG_FLOOR = 1e-12
# ||A^k||_F below this contributes nothing representable to sums whose entries are >= 1
POWER_NEGLIGIBLE = 1e-17
DENSE_SVD_LIMIT = 300


def inv_sqrt_psd(W: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Symmetric inverse square root through an eigendecomposition, eigenvalues floored."""
    W = 0.5 * (W + W.T)
    w, V = np.linalg.eigh(W)
    w = np.maximum(w, floor)
    return (V / np.sqrt(w)) @ V.T


def finite_gramian(A, s: int) -> np.ndarray:
    """``Gamma_s(A) = sum_{k=0}^{s} A^k (A^k)^T`` by iterated accumulation."""
    A = as_matrix(A)
    if s < 0:
        raise ValidationError(f"s must be nonnegative, got {s}")
    P = np.eye(A.shape[0])
    G = P.copy()
    for _ in range(int(s)):
        P = A @ P
        G += P @ P.T
    return G


@dataclass(frozen=True, eq=False)
class GramianSummary:
    t: int
    gramian_sum: np.ndarray
    lambda_min: float
    whitener: np.ndarray
    whitener_norm: float

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "gramian_sum": self.gramian_sum.tolist(),
            "lambda_min": self.lambda_min,
            "whitener": self.whitener.tolist(),
            "whitener_norm": self.whitener_norm,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GramianSummary":
        return cls(
            t=int(data["t"]),
            gramian_sum=np.array(data["gramian_sum"], dtype=float),
            lambda_min=float(data["lambda_min"]),
            whitener=np.array(data["whitener"], dtype=float),
            whitener_norm=float(data["whitener_norm"]),
        )


def _raw_gramian_sum(A: np.ndarray, t: int) -> np.ndarray:
    d = A.shape[0]
    P = np.eye(d)
    gam = np.eye(d)
    total = np.zeros((d, d))
    for s in range(t):
        total += gam
        P = A @ P
        if np.linalg.norm(P) < POWER_NEGLIGIBLE:
            # Gamma_s has converged to working precision; the rest is repeated additions
            total += (t - s - 1) * gam
            break
        gam = gam + P @ P.T
    return total


def gramian_sum(A, t: int) -> GramianSummary:
    """Sum of finite-time Gramians ``sum_{s=0}^{t-1} Gamma_s(A)`` and its whitener."""
    A = as_matrix(A)
    if isinstance(t, bool) or int(t) != t or t < 1:
        raise ValidationError(f"horizon t must be a positive integer, got {t!r}")
    t = int(t)
    total = _raw_gramian_sum(A, t)
    total = 0.5 * (total + total.T)
    w = np.linalg.eigvalsh(total)
    if not w[0] > 0:
        raise InternalError(f"Gramian sum is not positive definite (lambda_min={w[0]!r})")
    M = inv_sqrt_psd(total)
    return GramianSummary(
        t=t,
        gramian_sum=total,
        lambda_min=float(w[0]),
        whitener=M,
        whitener_norm=float(1.0 / math.sqrt(max(w[0], EIG_FLOOR))),
    )


@dataclass(frozen=True)
class SeriesBound:
    value: float
    partial_sum: float
    tail_bound: float
    block_length: int
    terms: int


def series_bound_details(A, tol: float = 1e-10, max_terms: int = 1_000_000) -> SeriesBound:
    """Upper bound on ``J(A) = sum_{s>=0} ||A^s||`` with a certified tail.

    Finds the first ``S0`` with ``q = ||A^S0|| <= 1/2``.  Blocks of ``S0``
    consecutive terms then shrink by at least ``q`` each, so the remainder
    after a block summing to ``B`` is at most ``B q / (1 - q)``.  Summation
    stops once that remainder is below ``tol``.
    """
    A = as_matrix(A)
    if tol <= 0:
        raise ValidationError("tol must be positive")
    d = A.shape[0]
    P = np.eye(d)
    norms = [1.0]
    S0 = None
    for k in range(1, max_terms + 1):
        P = A @ P
        nk = float(np.linalg.norm(P, 2))
        norms.append(nk)
        if nk <= 0.5:
            S0 = k
            break
    if S0 is None:
        raise NonConvergenceError(
            f"||A^k|| stayed above 1/2 for {max_terms} powers (spectral radius {spectral_radius(A):.6g})"
        )
    q = norms[S0]
    # norms holds s = 0..S0; the first block is s = 0..S0-1
    partial = math.fsum(norms[:S0])
    block = partial
    s = S0
    terms = S0
    while True:
        tail = block * q / (1.0 - q)
        if tail <= tol or block == 0.0:
            return SeriesBound(partial + tail, partial, tail, S0, terms)
        if terms >= max_terms:
            raise NonConvergenceError(f"tail of J(A) not below {tol} after {max_terms} terms")
        block_terms = []
        for _ in range(S0):
            if s < len(norms):
                block_terms.append(norms[s])
            else:
                P = A @ P
                block_terms.append(float(np.linalg.norm(P, 2)))
            s += 1
        block = math.fsum(block_terms)
        partial += block
        terms += S0


def series_bound(A, tol: float = 1e-10) -> float:
    """``J(A)``: partial sum of ``||A^s||`` plus a certified tail bound below ``tol``."""
    return series_bound_details(A, tol).value


def toeplitz_matrix(A, t: int) -> np.ndarray:
    """Lower block-Toeplitz ``td x td`` matrix with block ``A^{i-j}`` at block position ``(i, j)``."""
    A = as_matrix(A)
    d = A.shape[0]
    G = np.zeros((t * d, t * d))
    blocks = G.reshape(t, d, t, d)
    P = np.eye(d)
    for k in range(t):
        blocks[np.arange(k, t), :, np.arange(t - k), :] = P
        P = A @ P
    return G


def toeplitz_norm_explicit(A, t: int, cap: int = TOEPLITZ_CAP) -> float:
    """Largest singular value of the assembled block-Toeplitz matrix."""
    A = as_matrix(A)
    n = t * A.shape[0]
    if n > cap:
        raise CapacityError(f"block-Toeplitz size t*d = {n} exceeds cap {cap}")
    G = toeplitz_matrix(A, t)
    if n <= DENSE_SVD_LIMIT:
        return float(np.linalg.norm(G, 2))
    # top eigenvalue of the Gram matrix; Krylov solvers stall on the clustered top spectrum
    lam = scipy.linalg.eigvalsh(G.T @ G, subset_by_index=[n - 1, n - 1])[0]
    return float(math.sqrt(max(lam, 0.0)))


def _powers(A: np.ndarray, t: int) -> np.ndarray:
    d = A.shape[0]
    out = [np.eye(d)]
    P = out[0]
    for _ in range(1, t):
        P = A @ P
        if np.linalg.norm(P) < POWER_NEGLIGIBLE:
            break
        out.append(P)
    return np.array(out)


def _symbol_on_grid(powers: np.ndarray, n_grid: int) -> np.ndarray:
    # sum_s A^s e^{2 pi i s k/n}: fold s mod n, then an inverse DFT along s
    d = powers.shape[1]
    folded = np.zeros((n_grid, d, d))
    idx = np.arange(len(powers)) % n_grid
    np.add.at(folded, idx, powers)
    vals = n_grid * np.fft.ifft(folded, axis=0)
    if d == 1:
        return np.abs(vals[:, 0, 0])
    return np.linalg.norm(vals, ord=2, axis=(1, 2))


def _symbol_at(powers: np.ndarray, x: float) -> float:
    z = np.exp(2j * np.pi * x * np.arange(len(powers)))
    return float(np.linalg.norm(np.tensordot(z, powers, axes=1), 2))


@dataclass(frozen=True)
class SymbolBound:
    value: float
    grid_points: int
    grid_max: float
    refinement_change: float
    argmax: float


def toeplitz_symbol_details(
    A, t: int, grid_points: int = 4096, tol: float = 1e-6, max_grid: int = 1 << 18
) -> SymbolBound:
    """Supremum over ``x in [0, 1)`` of ``||sum_{s<t} A^s e^{2 pi i s x}||``.

    Evaluated on a uniform grid; the grid is doubled until the maximum moves
    by less than ``tol`` (or ``max_grid`` is reached), then the best cells
    are polished with a bounded scalar search.
    """
    A = as_matrix(A)
    if grid_points < 2:
        raise ValidationError("grid_points must be >= 2")
    powers = _powers(A, int(t))
    n = int(grid_points)
    vals = _symbol_on_grid(powers, n)
    change = math.inf
    while True:
        finer = _symbol_on_grid(powers, 2 * n)
        change = float(finer.max() - vals.max())
        n *= 2
        vals = finer
        if change < tol or n >= max_grid:
            break
    k_best = int(np.argmax(vals))
    best, arg = float(vals[k_best]), k_best / n
    h = 1.0 / n
    for k in np.argsort(vals)[-3:]:
        x0 = k / n
        res = optimize.minimize_scalar(
            lambda x: -_symbol_at(powers, x), bounds=(x0 - h, x0 + h), method="bounded",
            options={"xatol": 1e-12},
        )
        if -res.fun > best:
            best, arg = float(-res.fun), float(res.x % 1.0)
    return SymbolBound(best, n, float(vals.max()), change, arg)


def toeplitz_norm_symbol(A, t: int, grid_points: int = 4096) -> float:
    return toeplitz_symbol_details(A, t, grid_points).value


@dataclass(frozen=True)
class ToeplitzInfo:
    t: int
    explicit_norm: Optional[float]
    symbol_bound: float
    series_bound: float
    symbol_grid_points: int
    symbol_refinement_change: float
    series_tail_bound: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ToeplitzInfo":
        return cls(**data)


def toeplitz_info(
    A, t: int, cap: int = TOEPLITZ_CAP, grid_points: int = 4096, tol: float = 1e-10
) -> ToeplitzInfo:
    A = as_matrix(A)
    explicit = toeplitz_norm_explicit(A, t, cap) if t * A.shape[0] <= cap else None
    sym = toeplitz_symbol_details(A, t, grid_points)
    ser = series_bound_details(A, tol)
    return ToeplitzInfo(
        t=int(t),
        explicit_norm=explicit,
        symbol_bound=sym.value,
        series_bound=ser.value,
        symbol_grid_points=sym.grid_points,
        symbol_refinement_change=sym.refinement_change,
        series_tail_bound=ser.tail_bound,
    )


LOWER_BOUND_NOTE = "necessary condition proven only on the scaled-orthogonal class"


@dataclass(frozen=True)
class BoundReport:
    epsilon: float
    delta: float
    c: float
    constant_mode: str
    c_effective: float
    K: float
    d: int
    J: float
    log_term: float
    required_lambda_min: float
    minimal_t: int
    lambda_min_at_minimal_t: float
    lambda_min_before_minimal_t: Optional[float]
    t_eval: int
    lambda_min_at_t_eval: float
    rate_bound: float
    lower_bound_lambda_min: float
    lower_bound_note: str
    proof_constant: float
    required_lambda_min_proof_form: float
    toeplitz: ToeplitzInfo
    c1: float = 1.0
    c2: float = 1.0
    noise_kind: Optional[str] = None
    psi2_unit_convention: Optional[float] = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["toeplitz"] = self.toeplitz.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BoundReport":
        data = dict(data)
        data["toeplitz"] = ToeplitzInfo.from_dict(data["toeplitz"])
        return cls(**data)


def _minimal_horizon(A: np.ndarray, required: float, t_max: int) -> int:
    def holds(t):
        return gramian_sum(A, t).lambda_min >= required

    hi = 1
    while not holds(hi):
        if hi >= t_max:
            lam = gramian_sum(A, t_max).lambda_min
            raise CapacityError(
                f"condition needs lambda_min >= {required:.6g} but lambda_min at t_max={t_max} is {lam:.6g}"
            )
        hi = min(2 * hi, t_max)
    if hi == 1:
        return 1
    lo = hi // 2  # fails
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if holds(mid):
            hi = mid
        else:
            lo = mid
    return hi


def required_lambda_min(A, epsilon: float, delta: float, c: float = 1.0, J: Optional[float] = None) -> float:
    """``c * max(1/eps^2, J(A)^2) * (log(1/delta) + d)``."""
    A = as_matrix(A)
    if J is None:
        J = series_bound(A)
    return c * max(1.0 / epsilon**2, J**2) * (math.log(1.0 / delta) + A.shape[0])


def minimal_horizon(A, epsilon: float, delta: float, c: float = 1.0, t_max: int = 10_000_000) -> int:
    """Smallest ``t`` with ``lambda_min(sum_{s<t} Gamma_s(A))`` at or above the required level."""
    A = as_matrix(A)
    return _minimal_horizon(A, required_lambda_min(A, epsilon, delta, c), int(t_max))


def evaluate_conditions(
    A,
    epsilon: float,
    delta: float,
    c: float = 1.0,
    K: Optional[float] = None,
    t_max: int = 10_000_000,
    *,
    noise=None,
    t: Optional[int] = None,
    constant_mode: str = "c",
    c1: float = 1.0,
    c2: float = 1.0,
    grid_points: int = 4096,
    cap: int = TOEPLITZ_CAP,
    series_tol: float = 1e-10,
) -> BoundReport:
    """Evaluate the sufficient sample-size condition and related thresholds.

    ``required_lambda_min = c_eff * max(1/eps^2, J(A)^2) * (log(1/delta) + d)``
    where ``c_eff = c`` (``constant_mode="c"``) or ``c * K**4``
    (``constant_mode="cprime"``).  The smallest horizon whose Gramian sum
    reaches it is found by doubling then bisection.  The report also carries
    the proof-form requirement ``16 K^2 max(c1, K^2/c2) max(1/eps^2, J^2)
    (log(4/delta) + d log 10)``, the error-rate bound at ``t`` (default: the
    minimal horizon) and the lower-bound threshold ``c_eff (log(1/delta)+d)/eps^2``.

    ``K`` defaults to the sub-gaussian norm of ``noise`` when given, else 1.
    For gaussian noise the report also records the unit-norm convention
    alongside the value from the defining infimum.
    """
    A = as_matrix(A)
    d = A.shape[0]
    if noise is not None and not isinstance(noise, NoiseFamily):
        noise = NoiseFamily(noise)
    if K is None:
        K = noise.psi2 if noise is not None else 1.0
    if not 0 < epsilon < 1:
        raise ValidationError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not 0 < delta < 1:
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")
    if not c > 0:
        raise ValidationError(f"constant c must be positive, got {c}")
    if not K >= 1:
        raise ValidationError(f"K must be >= 1 for isotropic noise, got {K}")
    if constant_mode not in ("c", "cprime"):
        raise ValidationError(f"constant_mode must be 'c' or 'cprime', got {constant_mode!r}")
    rho = spectral_radius(A)
    if not rho < 1:
        raise ValidationError(f"system is not stable: spectral radius {rho:.6g} >= 1")

    c_eff = c * K**4 if constant_mode == "cprime" else c
    J = series_bound(A, series_tol)
    log_term = math.log(1.0 / delta) + d
    scale = max(1.0 / epsilon**2, J**2)
    required = required_lambda_min(A, epsilon, delta, c_eff, J)
    t_min = _minimal_horizon(A, required, int(t_max))
    lam_min = gramian_sum(A, t_min).lambda_min
    lam_before = gramian_sum(A, t_min - 1).lambda_min if t_min > 1 else None

    t_eval = t_min if t is None else int(t)
    lam_eval = lam_min if t_eval == t_min else gramian_sum(A, t_eval).lambda_min
    proof_C = 16.0 * K**2 * max(c1, K**2 / c2)
    notes = [
        "J(A) stands in for the horizon-dependent block-Toeplitz norm in the requirement",
        "lower bound: " + LOWER_BOUND_NOTE,
    ]
    return BoundReport(
        epsilon=float(epsilon),
        delta=float(delta),
        c=float(c),
        constant_mode=constant_mode,
        c_effective=float(c_eff),
        K=float(K),
        d=d,
        J=J,
        log_term=log_term,
        required_lambda_min=required,
        minimal_t=t_min,
        lambda_min_at_minimal_t=lam_min,
        lambda_min_before_minimal_t=lam_before,
        t_eval=t_eval,
        lambda_min_at_t_eval=lam_eval,
        rate_bound=c_eff * math.sqrt(log_term / lam_eval),
        lower_bound_lambda_min=c_eff * log_term / epsilon**2,
        lower_bound_note=LOWER_BOUND_NOTE,
        proof_constant=proof_C,
        required_lambda_min_proof_form=proof_C * scale * (math.log(4.0 / delta) + d * math.log(10.0)),
        toeplitz=toeplitz_info(A, t_eval, cap=cap, grid_points=grid_points, tol=series_tol),
        c1=float(c1),
        c2=float(c2),
        noise_kind=None if noise is None else noise.kind.value,
        psi2_unit_convention=1.0 if noise is not None and noise.kind is NoiseKind.GAUSSIAN else None,
        notes=notes,
    )
