"""Ordinary least squares for ``x_{s+1} = A x_s + eta_{s+1}`` and its error terms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ValidationError
from .gramians import inv_sqrt_psd
from .lti import Trajectory, as_matrix

__all__ = [
    "OlsEstimate",
    "SelfNormStat",
    "error_identity_check",
    "estimation_error",
    "ols",
    "pinv_symmetric",
    "self_normalized_stat",
]


def pinv_symmetric(G: np.ndarray) -> tuple[np.ndarray, int, float]:
    """Pseudo-inverse of a symmetric PSD matrix.

    Eigenvalues below ``d * machine_eps * lambda_max`` are treated as zero.
    Returns ``(pinv, rank, threshold)``.
    """
    G = 0.5 * (G + G.T)
    d = G.shape[0]
    w, V = np.linalg.eigh(G)
    lam_max = max(float(w[-1]), 0.0)
    threshold = d * np.finfo(float).eps * lam_max
    keep = w > threshold
    if lam_max == 0.0 or not keep.any():
        return np.zeros_like(G), 0, threshold
    Vk = V[:, keep]
    return (Vk / w[keep]) @ Vk.T, int(keep.sum()), threshold


@dataclass(frozen=True, eq=False)
class OlsEstimate:
    A_hat: np.ndarray
    gram: np.ndarray
    gram_rank: int
    pinv_threshold_used: float
    error_opnorm: Optional[float] = None

    @property
    def degenerate(self) -> bool:
        return self.gram_rank < self.gram.shape[0]

    def to_dict(self) -> dict:
        return {
            "A_hat": self.A_hat.tolist(),
            "gram": self.gram.tolist(),
            "gram_rank": self.gram_rank,
            "pinv_threshold_used": self.pinv_threshold_used,
            "error_opnorm": self.error_opnorm,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OlsEstimate":
        return cls(
            A_hat=np.array(data["A_hat"], dtype=float),
            gram=np.array(data["gram"], dtype=float),
            gram_rank=int(data["gram_rank"]),
            pinv_threshold_used=float(data["pinv_threshold_used"]),
            error_opnorm=data.get("error_opnorm"),
        )


def estimation_error(A_hat, A) -> float:
    """Operator norm ``||A_hat - A||``."""
    A_hat = np.asarray(A_hat, dtype=float)
    A = np.asarray(A, dtype=float)
    if A_hat.shape != A.shape:
        raise ValidationError(f"shape mismatch: {A_hat.shape} vs {A.shape}")
    return float(np.linalg.norm(A_hat - A, 2))


def ols(traj: Trajectory, A=None) -> OlsEstimate:
    """OLS estimate ``(sum x_{s+1} x_s^T)(sum x_s x_s^T)^+`` over ``s = 1..t``.

    The ``s = 0`` terms vanish because ``x_0 = 0``.  A zero Gram matrix gives
    ``A_hat = 0`` with rank 0.  When the true ``A`` is given the operator-norm
    error is filled in.
    """
    X, Y = traj.X, traj.Y
    gram = X.T @ X
    gram = 0.5 * (gram + gram.T)
    cross = Y.T @ X
    pinv, rank, thr = pinv_symmetric(gram)
    A_hat = cross @ pinv
    err = None
    if A is not None:
        err = estimation_error(A_hat, as_matrix(A))
    return OlsEstimate(A_hat, gram, rank, thr, err)


def error_identity_check(traj: Trajectory, A) -> float:
    """``||(A_hat - A) P - E^T X (X^T X)^+||`` for the trajectory's noise record ``E``.

    ``P`` projects onto the range of ``X^T X``; it is the identity whenever
    ``X`` has full column rank.  On rank-deficient paths the component of
    ``A`` outside the observed directions cannot be recovered and is dropped.
    """
    if traj.noise_record is None:
        raise ValidationError("error identity needs the trajectory's noise record")
    A = as_matrix(A)
    est = ols(traj)
    pinv, rank, _ = pinv_symmetric(est.gram)
    rhs = traj.E.T @ traj.X @ pinv
    lhs = est.A_hat - A
    if rank < traj.d:
        lhs = lhs @ (pinv @ est.gram)
    return float(np.linalg.norm(lhs - rhs, 2))


@dataclass(frozen=True, eq=False)
class SelfNormStat:
    S: np.ndarray
    value: float
    bound: float
    log_det_ratio: float

    def to_dict(self) -> dict:
        return {"S": self.S.tolist(), "value": self.value, "bound": self.bound, "log_det_ratio": self.log_det_ratio}

    @classmethod
    def from_dict(cls, data: dict) -> "SelfNormStat":
        return cls(np.array(data["S"], dtype=float), float(data["value"]), float(data["bound"]),
                   float(data["log_det_ratio"]))


def _check_pd(S: np.ndarray, name: str = "S") -> np.ndarray:
    S = as_matrix(S, name)
    if not np.allclose(S, S.T, rtol=1e-10, atol=1e-12):
        raise ValidationError(f"{name} must be symmetric")
    S = 0.5 * (S + S.T)
    if not np.linalg.eigvalsh(S)[0] > 0:
        raise ValidationError(f"{name} must be positive definite")
    return S


def self_normalized_threshold(log_det_ratio: float, d: int, delta: float, K: float, c: float) -> float:
    """Square root of ``16 c K^2 log(5^d det((X^T X + S) S^{-1})^{1/2} / delta)``."""
    inner = d * math.log(5.0) + 0.5 * log_det_ratio + math.log(1.0 / delta)
    return math.sqrt(16.0 * c * K**2 * inner)


def self_normalized_stat(traj: Trajectory, S, delta: float, K: float, c: float = 1.0) -> SelfNormStat:
    """``||E^T X (X^T X + S)^{-1/2}||`` and its high-probability bound at level ``delta``."""
    if not 0 < delta < 1:
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")
    S = _check_pd(S)
    if S.shape[0] != traj.d:
        raise ValidationError(f"S is {S.shape[0]}x{S.shape[0]} but the trajectory has dimension {traj.d}")
    X, E = traj.X, traj.E
    V = X.T @ X + S
    value = float(np.linalg.norm(E.T @ X @ inv_sqrt_psd(V), 2))
    ld = float(np.linalg.slogdet(V)[1] - np.linalg.slogdet(S)[1])
    return SelfNormStat(S, value, self_normalized_threshold(ld, traj.d, delta, K, c), ld)
