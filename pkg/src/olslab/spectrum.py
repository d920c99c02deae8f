"""Spectrum of the covariates matrix: isometry defect, sphere nets, chaos and quadratic-form tails."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import CapacityError, InternalError, NonConvergenceError, ValidationError
from .gramians import TOEPLITZ_CAP, toeplitz_matrix
from .lti import NoiseFamily, Trajectory, as_matrix, iter_noise_samples

__all__ = [
    "ChaosResult",
    "HWTail",
    "IsometryReport",
    "SphereNet",
    "build_net",
    "chaos_statistic",
    "covering_radius",
    "hw_tail_estimate",
    "isometry_defect",
    "net_cardinality_cap",
    "net_opnorm_bound",
    "spectrum_containment",
]

# Relative slack on the singular-value sandwich; absorbs eigensolver round-off only.
CONTAINMENT_RTOL = 1e-10


def _implied_epsilon(defect: float) -> float:
    # inverse of eps -> max(eps, eps^2) on [0, inf)
    return defect if defect <= 1.0 else math.sqrt(defect)


@dataclass(frozen=True)
class IsometryReport:
    defect: float
    singulars: list
    epsilon_implied: float
    epsilon_used: float
    predicted_low: float
    predicted_high: float
    containment: bool

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "IsometryReport":
        return cls(**data)


def isometry_defect(X, M, epsilon: Optional[float] = None) -> IsometryReport:
    """``||(XM)^T XM - I||`` with the singular-value sandwich it implies.

    With ``epsilon`` omitted the sandwich ``(1-eps)/s_1(M) <= s_d(X) <= s_1(X)
    <= (1+eps)/s_d(M)`` is evaluated at the implied ``eps`` solving
    ``max(eps, eps^2) = defect``; otherwise at the given ``epsilon``.
    """
    X = as_matrix(X, "X", square=False)
    M = as_matrix(M, "M")
    d = X.shape[1]
    if M.shape[0] != d:
        raise ValidationError(f"X has {d} columns but M is {M.shape[0]}x{M.shape[0]}")
    XM = X @ M
    D = XM.T @ XM - np.eye(d)
    defect = float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (D + D.T)))))
    s_x = np.linalg.svd(X, compute_uv=False)
    s_m = np.linalg.svd(M, compute_uv=False)
    eps_implied = _implied_epsilon(defect)
    eps = eps_implied if epsilon is None else float(epsilon)
    low = (1.0 - eps) / s_m[0]
    high = (1.0 + eps) / s_m[-1]
    s_min = s_x[min(d, X.shape[0]) - 1] if X.shape[0] >= d else 0.0
    ok = bool(s_min >= low - CONTAINMENT_RTOL * abs(low) and s_x[0] <= high * (1 + CONTAINMENT_RTOL))
    return IsometryReport(defect, [float(s) for s in s_x], eps_implied, eps, float(low), float(high), ok)


def spectrum_containment(X, M, epsilon: float, K: float) -> bool:
    """Two-sided bound ``(1 - K^2 eps)/||M|| <= s_d(X) <= s_1(X) <= (1 + K^2 eps)/s_d(M)``."""
    return isometry_defect(X, M, epsilon=K**2 * epsilon).containment


def net_cardinality_cap(d: int, eps: float) -> float:
    return (1.0 + 2.0 / eps) ** d


@dataclass(frozen=True, eq=False)
class SphereNet:
    d: int
    eps: float
    points: np.ndarray
    verified_radius: float
    n_probe: int
    flags: tuple = ()

    @property
    def cardinality(self) -> int:
        return len(self.points)

    @property
    def cardinality_cap(self) -> float:
        return net_cardinality_cap(self.d, self.eps)


def _nearest_distances(probes: np.ndarray, points: np.ndarray) -> np.ndarray:
    if len(points) == 0:
        return np.full(len(probes), np.inf)
    out = np.empty(len(probes))
    chunk = max(1, 20_000_000 // len(points))
    for start in range(0, len(probes), chunk):
        G = probes[start : start + chunk] @ points.T
        # unit vectors: ||p - q||^2 = 2 - 2 p.q
        out[start : start + chunk] = np.sqrt(np.maximum(2.0 - 2.0 * G.max(axis=1), 0.0))
    return out


def covering_radius(points, probes) -> float:
    """Largest distance from any probe direction to its nearest point."""
    return float(_nearest_distances(np.asarray(probes, float), np.asarray(points, float)).max())


def _unit_probes(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    P = rng.standard_normal((n, d))
    return P / np.linalg.norm(P, axis=1, keepdims=True)


def build_net(d: int, eps: float, seed: int = 0, n_probe: int = 100_000, max_rounds: int = 200) -> SphereNet:
    """Greedy eps-net of the unit sphere in ``R^d``.

    Each round draws ``n_probe`` random directions; uncovered ones are added
    greedily, each new point farther than ``eps`` from every chosen point.
    Separation keeps the cardinality under ``(1 + 2/eps)^d``.  Construction
    stops after a round in which no probe was uncovered; that round's largest
    nearest-point distance is the verified radius.
    """
    if isinstance(d, bool) or int(d) != d or d < 1:
        raise ValidationError(f"dimension must be a positive integer, got {d!r}")
    if d > 8:
        raise CapacityError(f"sphere nets are limited to d <= 8, got {d}")
    if not eps > 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    flags = ("eps>=1",) if eps >= 1 and d > 1 else ()
    if d == 1:
        return SphereNet(1, float(eps), np.array([[-1.0], [1.0]]), 0.0, 0, flags)

    rng = np.random.default_rng(seed)
    points = np.empty((0, d))
    for _ in range(max_rounds):
        probes = _unit_probes(rng, n_probe, d)
        dist = _nearest_distances(probes, points)
        uncovered = probes[dist > eps]
        if len(uncovered) == 0:
            return SphereNet(d, float(eps), points, float(dist.max()), n_probe, flags)
        chosen = []
        while len(uncovered):
            p = uncovered[0]
            chosen.append(p)
            far = np.sqrt(np.maximum(2.0 - 2.0 * (uncovered @ p), 0.0)) > eps
            uncovered = uncovered[far]
        points = np.vstack([points, np.array(chosen)])
    raise NonConvergenceError(f"net for d={d}, eps={eps} still had uncovered probes after {max_rounds} rounds")


def net_opnorm_bound(W, net: SphereNet, symmetric: bool = False) -> float:
    """Upper bound on ``||W||`` from its values on an eps-net.

    General ``W``: ``max_x ||W x|| / (1 - eps)``.  Symmetric ``W``:
    ``max_x |x^T W x| / (1 - 2 eps)``, requiring ``eps < 1/2``.
    """
    W = as_matrix(W, "W", square=symmetric)
    if W.shape[1] != net.d:
        raise ValidationError(f"W has {W.shape[1]} columns but the net lives in R^{net.d}")
    eps = net.eps
    if symmetric:
        if eps >= 0.5:
            raise ValidationError("the symmetric net bound needs eps < 1/2")
        if not np.allclose(W, W.T):
            raise ValidationError("W is not symmetric")
        q = np.einsum("ij,jk,ik->i", net.points, W, net.points)
        return float(np.max(np.abs(q)) / (1.0 - 2.0 * eps))
    if eps >= 1:
        raise ValidationError("the general net bound needs eps < 1")
    return float(np.max(np.linalg.norm(net.points @ W.T, axis=1)) / (1.0 - eps))


@dataclass(frozen=True)
class ChaosResult:
    direct: float
    via_toeplitz: Optional[float]
    frobenius_sq: Optional[float]
    toeplitz_computed: bool


def chaos_statistic(traj: Trajectory, A, M, u, cap: int = TOEPLITZ_CAP) -> ChaosResult:
    """``| ||X M u||^2 - 1 |`` computed from the states and from ``sigma_{Mu}^T Gamma xi``.

    ``xi`` stacks ``eta_1 .. eta_t`` (``eta_1 = x_1``), so ``vec(X^T) = Gamma xi``.
    ``sigma_{Mu}`` is block diagonal with ``t`` copies of the column ``Mu``;
    ``||sigma_{Mu}^T Gamma||_F^2`` must equal 1 when ``M`` whitens the system
    at this horizon.  Above the Toeplitz cap only the direct value is returned.
    """
    A = as_matrix(A)
    M = as_matrix(M, "M")
    u = np.asarray(u, dtype=float).ravel()
    if u.shape[0] != traj.d or M.shape[0] != traj.d:
        raise ValidationError("dimension mismatch between trajectory, M and u")
    if abs(np.linalg.norm(u) - 1.0) > 1e-12:
        raise ValidationError("u must be a unit vector")
    v = M @ u
    direct = abs(float(np.sum((traj.X @ v) ** 2)) - 1.0)
    t, d = traj.t, traj.d
    if t * d > cap:
        return ChaosResult(direct, None, None, False)

    gamma = toeplitz_matrix(A, t)
    xi = np.concatenate([traj.states[0], traj.E[: t - 1].ravel()])
    # sigma^T Gamma: row s is v^T times block-row s of Gamma
    W = np.tensordot(v, gamma.reshape(t, d, t * d), axes=([0], [1]))
    frob = float(np.sum(W**2))
    if abs(frob - 1.0) > 1e-10:
        raise ValidationError(f"M does not whiten the system at horizon {t}: ||sigma^T Gamma||_F^2 = {frob!r}")
    via = abs(float(np.sum((W @ xi) ** 2)) - frob)
    if abs(via - direct) > 1e-9:
        raise InternalError(f"chaos statistic paths disagree: direct {direct!r} vs Toeplitz {via!r}")
    return ChaosResult(direct, via, frob, True)


@dataclass(frozen=True, eq=False)
class HWTail:
    eps: np.ndarray
    empirical: np.ndarray
    bound: np.ndarray
    std_error: np.ndarray
    frobenius_sq: float
    opnorm_sq: float
    n_trials: int
    K: float
    c: float

    def rows(self):
        for i in range(len(self.eps)):
            yield {
                "eps": float(self.eps[i]),
                "empirical": float(self.empirical[i]),
                "std_error": float(self.std_error[i]),
                "bound": float(self.bound[i]),
            }


def hw_tail_estimate(
    B, noise: NoiseFamily, eps, n_trials: int, seed: int, c: float = 1.0
) -> HWTail:
    """Monte Carlo frequency of ``| ||B xi||^2 - ||B||_F^2 | > eps ||B||_F^2``.

    ``eps`` may be a scalar or a grid; all levels share the same draws, so
    the estimated tail is exactly nonincreasing in ``eps``.  The reported
    bound is ``2 exp(-c min(eps^2/K^4, eps/K^2) ||B||_F^2 / ||B||^2)``.
    """
    B = as_matrix(B, "B", square=False)
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    if np.any(eps <= 0):
        raise ValidationError("eps must be positive")
    if n_trials < 1:
        raise ValidationError("n_trials must be >= 1")
    if not isinstance(noise, NoiseFamily):
        noise = NoiseFamily(noise)
    frob = float(np.sum(B**2))
    op = float(np.linalg.norm(B, 2)) ** 2
    counts = np.zeros(len(eps), dtype=np.int64)
    for xi in iter_noise_samples(noise, int(n_trials), B.shape[1], seed):
        q = np.sum((xi @ B.T) ** 2, axis=1)
        dev = np.abs(q - frob)
        counts += (dev[:, None] > eps[None, :] * frob).sum(axis=0)
    p = counts / n_trials
    K = noise.psi2
    bound = 2.0 * np.exp(-c * np.minimum(eps**2 / K**4, eps / K**2) * frob / op)
    return HWTail(eps, p, bound, np.sqrt(p * (1 - p) / n_trials), frob, op, int(n_trials), K, c)
