"""Autonomous stable LTI systems driven by isotropic sub-gaussian noise.

The recursion is ``x_0 = 0`` and ``x_{s+1} = A x_s + eta_{s+1}``.  A
trajectory of horizon ``t`` holds the states ``x_1 .. x_{t+1}`` together with
the noise record ``eta_2 .. eta_{t+1}`` that drove the last ``t`` steps.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import optimize, special

from .errors import ValidationError

__all__ = [
    "NoiseKind",
    "NoiseFamily",
    "SystemSpec",
    "Trajectory",
    "as_matrix",
    "derive_seed",
    "psi2_norm",
    "simulate",
    "simulate_from_noise",
    "simulate_many",
    "spectral_radius",
]

SEED_MASK = (1 << 64) - 1
UNIFORM_HALF_WIDTH = math.sqrt(3.0)


def as_matrix(A, name: str = "A", square: bool = True) -> np.ndarray:
    """Coerce ``A`` to a finite 2-D float array, raising ValidationError otherwise."""
    arr = np.array(A, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be a 2-D matrix, got {arr.ndim} dimension(s)")
    if square and arr.shape[0] != arr.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {arr.shape}")
    if arr.size == 0:
        raise ValidationError(f"{name} is empty")
    bad = np.argwhere(~np.isfinite(arr))
    if len(bad):
        i, j = bad[0]
        raise ValidationError(f"{name}[{i}][{j}] is not finite ({arr[i, j]!r})")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


def spectral_radius(A) -> float:
    """Largest eigenvalue modulus of a square matrix (dense eigendecomposition)."""
    A = as_matrix(A)
    return float(np.max(np.abs(np.linalg.eigvals(A))))


class NoiseKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"
    UNIFORM = "uniform"


def _uniform_psi2_gap(K: float) -> float:
    # E exp(X^2/K^2) for X ~ U[-sqrt3, sqrt3], via int_0^a exp(x^2/K^2) dx = K sqrt(pi)/2 erfi(a/K)
    a = UNIFORM_HALF_WIDTH
    return K * math.sqrt(math.pi) / (2.0 * a) * float(special.erfi(a / K)) - 2.0


@lru_cache(maxsize=None)
def psi2_norm(kind) -> float:
    """Sub-gaussian norm ``inf{K : E exp(X^2/K^2) <= 2}`` of one unit-variance coordinate.

    Closed forms for gaussian (``sqrt(8/3)``) and rademacher (``1/sqrt(ln 2)``);
    the uniform law on ``[-sqrt3, sqrt3]`` is solved numerically.
    """
    kind = NoiseKind(kind)
    if kind is NoiseKind.GAUSSIAN:
        # E exp(X^2/K^2) = (1 - 2/K^2)^{-1/2}
        return math.sqrt(8.0 / 3.0)
    if kind is NoiseKind.RADEMACHER:
        return 1.0 / math.sqrt(math.log(2.0))
    return optimize.brentq(_uniform_psi2_gap, 0.5, 5.0, xtol=1e-14, rtol=4 * np.finfo(float).eps)


@dataclass(frozen=True)
class NoiseFamily:
    """I.i.d. zero-mean, unit-variance coordinates of a fixed law."""

    kind: NoiseKind = NoiseKind.GAUSSIAN

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", NoiseKind(self.kind))
        except ValueError:
            names = ", ".join(k.value for k in NoiseKind)
            raise ValidationError(f"unknown noise kind {self.kind!r} (expected one of {names})") from None

    @property
    def psi2(self) -> float:
        return psi2_norm(self.kind)

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind is NoiseKind.GAUSSIAN:
            return rng.standard_normal(size)
        if self.kind is NoiseKind.RADEMACHER:
            return 2.0 * rng.integers(0, 2, size=size).astype(float) - 1.0
        return rng.uniform(-UNIFORM_HALF_WIDTH, UNIFORM_HALF_WIDTH, size=size)


def derive_seed(*keys: int) -> int:
    """Derive a 64-bit seed from an ordered tuple of integer keys.

    Used as ``derive_seed(master_seed, t, trial_index)`` so that every trial
    owns an independent stream regardless of execution order.
    """
    ss = np.random.SeedSequence([int(k) & SEED_MASK for k in keys])
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def noise_stream(seed: int) -> np.random.Generator:
    """Counter-based generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & SEED_MASK))


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Stable dynamics ``A`` (spectral radius < 1) and the noise family driving it."""

    A: np.ndarray
    noise: NoiseFamily = field(default_factory=NoiseFamily)

    def __post_init__(self):
        A = as_matrix(self.A)
        rho = spectral_radius(A)
        if not rho < 1.0:
            raise ValidationError(f"system is not stable: spectral radius {rho:.6g} >= 1")
        object.__setattr__(self, "A", _frozen(A))
        if not isinstance(self.noise, NoiseFamily):
            object.__setattr__(self, "noise", NoiseFamily(self.noise))

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def rho(self) -> float:
        return spectral_radius(self.A)

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "noise": self.noise.kind.value}

    @classmethod
    def from_dict(cls, data: dict) -> "SystemSpec":
        return cls(np.array(data["A"], dtype=float), NoiseFamily(data.get("noise", "gaussian")))

    def spec_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def _step(A: np.ndarray, x: np.ndarray, eta: np.ndarray) -> np.ndarray:
    # Fixed accumulation order so batched and single propagation agree bit for bit.
    out = eta.copy()
    for j in range(A.shape[1]):
        out += x[..., j : j + 1] * A[:, j]
    return out


def _propagate(A: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """States for noise of shape (..., t+1, d) with rows eta_1 .. eta_{t+1}."""
    states = np.empty_like(noise)
    states[..., 0, :] = noise[..., 0, :]
    for s in range(1, noise.shape[-2]):
        states[..., s, :] = _step(A, states[..., s - 1, :], noise[..., s, :])
    return states


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Observed states ``x_1 .. x_{t+1}`` and the noise record ``eta_2 .. eta_{t+1}``."""

    states: np.ndarray
    noise_record: Optional[np.ndarray]
    seed: Optional[int] = None
    spec_hash: Optional[str] = None

    def __post_init__(self):
        states = as_matrix(self.states, "states", square=False)
        if states.shape[0] < 2:
            raise ValidationError("a trajectory needs at least two states (t >= 1)")
        object.__setattr__(self, "states", _frozen(states))
        if self.noise_record is not None:
            E = as_matrix(self.noise_record, "noise_record", square=False)
            if E.shape != (states.shape[0] - 1, states.shape[1]):
                raise ValidationError(
                    f"noise_record shape {E.shape} does not match {states.shape[0] - 1} transitions "
                    f"of dimension {states.shape[1]}"
                )
            object.__setattr__(self, "noise_record", _frozen(E))

    @property
    def t(self) -> int:
        return self.states.shape[0] - 1

    @property
    def d(self) -> int:
        return self.states.shape[1]

    @property
    def X(self) -> np.ndarray:
        """Covariates, rows ``x_1 .. x_t``."""
        return self.states[:-1]

    @property
    def Y(self) -> np.ndarray:
        """Targets, rows ``x_2 .. x_{t+1}``."""
        return self.states[1:]

    @property
    def E(self) -> np.ndarray:
        if self.noise_record is None:
            raise ValidationError("trajectory carries no noise record")
        return self.noise_record

    def replay_residual(self, A) -> float:
        """``max_s ||x_{s+1} - A x_s - eta_{s+1}||`` over the recorded transitions."""
        A = as_matrix(A)
        pred = _step(A, self.X, self.E)
        return float(np.max(np.linalg.norm(self.Y - pred, axis=1)))

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "d": self.d,
            "seed": self.seed,
            "spec_hash": self.spec_hash,
            "states": self.states.tolist(),
            "noise_record": None if self.noise_record is None else self.noise_record.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        if "states" not in data:
            raise ValidationError("trajectory JSON has no 'states' field")
        E = data.get("noise_record")
        return cls(
            states=np.array(data["states"], dtype=float),
            noise_record=None if E is None else np.array(E, dtype=float),
            seed=data.get("seed"),
            spec_hash=data.get("spec_hash"),
        )


def simulate_from_noise(spec: SystemSpec, noise, seed: Optional[int] = None) -> Trajectory:
    """Run the recursion on an explicit noise sequence ``eta_1 .. eta_{t+1}`` (rows)."""
    noise = np.asarray(noise, dtype=float)
    if noise.ndim == 1 and spec.d == 1:
        noise = noise[:, None]
    if noise.ndim != 2 or noise.shape[1] != spec.d or noise.shape[0] < 2:
        raise ValidationError(f"noise must have shape (t+1, {spec.d}) with t >= 1, got {noise.shape}")
    states = _propagate(spec.A, noise)
    return Trajectory(states, noise[1:], seed=seed, spec_hash=spec.spec_hash())


def _check_horizon(t) -> int:
    if isinstance(t, bool) or int(t) != t or t < 1:
        raise ValidationError(f"horizon t must be a positive integer, got {t!r}")
    return int(t)


def simulate(spec: SystemSpec, t: int, seed: int) -> Trajectory:
    """Simulate ``t`` transitions from ``x_0 = 0``; a pure function of ``(spec, t, seed)``."""
    return simulate_many(spec, t, [seed])[0]


def simulate_many(spec: SystemSpec, t: int, seeds: Sequence[int]) -> list[Trajectory]:
    """Simulate one trajectory per seed, propagating the batch together.

    Each trajectory is identical to ``simulate(spec, t, seed)`` for its seed.
    """
    t = _check_horizon(t)
    seeds = [int(s) for s in seeds]
    if not seeds:
        return []
    noise = np.stack([spec.noise.draw(noise_stream(s), (t + 1, spec.d)) for s in seeds])
    states = _propagate(spec.A, noise)
    h = spec.spec_hash()
    return [Trajectory(states[i], noise[i, 1:], seed=s, spec_hash=h) for i, s in enumerate(seeds)]


def iter_noise_samples(noise: NoiseFamily, n: int, d: int, seed: int) -> Iterable[np.ndarray]:
    """Yield ``n`` noise vectors in chunks, chunk ``k`` seeded by ``derive_seed(seed, k)``."""
    chunk = 8192
    for k, start in enumerate(range(0, n, chunk)):
        m = min(chunk, n - start)
        yield noise.draw(noise_stream(derive_seed(seed, k)), (m, d))
