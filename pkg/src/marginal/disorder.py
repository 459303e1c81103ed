"""Seeded disorder fields and the centred multiplicative increment eta.

Values are produced by a keyed, stateless hash of
(seed, realization_index, n, x), so a field can be queried in any order,
from any thread, and in vectorised blocks with identical results.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "DisorderLaw",
    "EtaParams",
    "DisorderField",
    "cumulant_lambda",
    "eta_transform",
    "field_value",
    "omega_values",
    "RNG_SCHEME",
]

RNG_SCHEME = "splitmix64-keyed/v1"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


class DisorderLaw(enum.Enum):
    GAUSSIAN = "GAUSSIAN"
    RADEMACHER = "RADEMACHER"

    @classmethod
    def parse(cls, value: "str | DisorderLaw") -> "DisorderLaw":
        if isinstance(value, cls):
            return value
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown disorder law {value!r}") from None


def cumulant_lambda(law: DisorderLaw, beta: float) -> float:
    """lambda(beta) = log E[exp(beta omega)]."""
    law = DisorderLaw.parse(law)
    if law is DisorderLaw.GAUSSIAN:
        return 0.5 * beta * beta
    # log cosh, stable for large |beta|
    a = abs(beta)
    return a + math.log1p(math.exp(-2.0 * a)) - math.log(2.0)


@dataclass(frozen=True)
class EtaParams:
    """beta, lambda(beta) and Var[eta] = (exp(lambda(2b) - 2 lambda(b)) - 1) / b^2."""

    beta: float
    lambda_beta: float
    var_eta: float
    direct: bool = False

    @classmethod
    def from_law(cls, law: DisorderLaw, beta: float) -> "EtaParams":
        if beta < 0:
            raise ValueError("beta must be nonnegative")
        lam = cumulant_lambda(law, beta)
        if beta == 0.0:
            return cls(0.0, 0.0, 1.0)
        gap = cumulant_lambda(law, 2.0 * beta) - 2.0 * lam
        return cls(beta, lam, math.expm1(gap) / (beta * beta))

    @classmethod
    def direct_mode(cls, beta: float) -> "EtaParams":
        """eta are i.i.d. standard Gaussians injected directly."""
        if beta < 0:
            raise ValueError("beta must be nonnegative")
        return cls(beta, 0.0, 1.0, direct=True)

    @property
    def gamma(self) -> float:
        """beta^2 Var[eta], the per-pickup weight of the second moment."""
        return self.beta * self.beta * self.var_eta


def eta_transform(params: EtaParams, omega):
    """eta = (exp(beta omega - lambda(beta)) - 1) / beta, with eta = omega at beta = 0."""
    omega = np.asarray(omega, dtype=float)
    if params.direct or params.beta == 0.0:
        out = omega.copy()
    else:
        out = np.expm1(params.beta * omega - params.lambda_beta) / params.beta
    return out if out.ndim else float(out)


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _as_u64(a) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype == np.uint64:
        return a
    return np.asarray(a, dtype=np.int64).view(np.uint64) if a.ndim else np.uint64(int(a) & _MASK64)


def omega_values(seed: int, realization, n, x=None, law: DisorderLaw = DisorderLaw.GAUSSIAN) -> np.ndarray:
    """Vectorised field values omega(seed, realization, n, x).

    ``realization``, ``n`` and each coordinate of ``x`` broadcast against one
    another; ``x`` is None (d = 0) or a sequence of coordinate arrays.
    """
    law = DisorderLaw.parse(law)
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(int(seed) & _MASK64) ^ np.uint64(0x5EED))
        h = _mix(h ^ _as_u64(np.asarray(realization, dtype=np.int64)))
        h = _mix(h ^ _as_u64(np.asarray(n, dtype=np.int64)))
        for coord in x or ():
            h = _mix(h ^ _as_u64(np.asarray(coord, dtype=np.int64)))
    h = np.asarray(h, dtype=np.uint64)
    if law is DisorderLaw.RADEMACHER:
        return np.where(h >> np.uint64(63), 1.0, -1.0)
    u = ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return special.ndtri(u)


@dataclass(frozen=True)
class DisorderField:
    """One realization of the i.i.d. environment omega(n, x)."""

    seed: int
    realization_index: int = 0
    law: DisorderLaw = DisorderLaw.GAUSSIAN

    def omega(self, n, x=None) -> np.ndarray:
        return omega_values(self.seed, self.realization_index, n, x, self.law)

    def eta(self, params: EtaParams, n, x=None) -> np.ndarray:
        if params.direct:
            return omega_values(self.seed, self.realization_index, n, x, DisorderLaw.GAUSSIAN)
        return eta_transform(params, self.omega(n, x))

    def xi(self, params: EtaParams, n, x=None) -> np.ndarray:
        """Multiplicative weight 1 + beta eta (= exp(beta omega - lambda) off direct mode)."""
        if params.direct:
            return 1.0 + params.beta * self.eta(params, n, x)
        return np.exp(params.beta * self.omega(n, x) - params.lambda_beta)

    def with_realization(self, index: int) -> "DisorderField":
        return DisorderField(self.seed, index, self.law)


def field_value(field: DisorderField, n: int, x=()) -> float:
    if n < 1:
        raise ValueError("disorder sites have n >= 1")
    coords = [np.int64(c) for c in np.atleast_1d(x)] if np.size(x) else None
    return float(field.omega(n, coords))


def batch_xi(seed: int, realizations: np.ndarray, law: DisorderLaw, params: EtaParams, n, x=None) -> np.ndarray:
    """xi for a block of realizations; realizations broadcast on the leading axis."""
    r = np.asarray(realizations, dtype=np.int64)
    if params.direct:
        eta = omega_values(seed, r, n, x, DisorderLaw.GAUSSIAN)
        return 1.0 + params.beta * eta
    w = omega_values(seed, r, n, x, law)
    return np.exp(params.beta * w - params.lambda_beta)


def batch_eta(seed: int, realizations: np.ndarray, law: DisorderLaw, params: EtaParams, n, x=None) -> np.ndarray:
    r = np.asarray(realizations, dtype=np.int64)
    if params.direct:
        return omega_values(seed, r, n, x, DisorderLaw.GAUSSIAN)
    return np.asarray(eta_transform(params, omega_values(seed, r, n, x, law)))


__all__ += ["batch_xi", "batch_eta"]
