"""Closed-form limit quantities, the covariance kernel K, the field variance
quadrature and samplers for the limiting objects."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .chaos import count_sharp
from .disorder import omega_values
from .kernels import renewal_llt_constant
from .partition import FieldWeight

__all__ = [
    "DomainError",
    "DiagonalError",
    "QuadratureError",
    "EnumerationError",
    "LimitLaw",
    "CovKernel",
    "sigma_sq",
    "cov_limit",
    "limit_sampler",
    "kernel_K",
    "sigma_psi_quadrature",
    "block_limit_sampler",
    "block_second_moment",
]


class DomainError(ValueError):
    pass


class DiagonalError(ValueError):
    pass


class QuadratureError(ArithmeticError):
    def __init__(self, message: str, iterates: tuple):
        super().__init__(f"{message}; last iterates {iterates}")
        self.iterates = iterates


class EnumerationError(RuntimeError):
    pass


def sigma_sq(beta_hat: float) -> float:
    """log(1 / (1 - beta_hat^2)), the variance of the limiting log Z."""
    if not 0.0 <= beta_hat < 1.0:
        raise DomainError("sigma_sq needs 0 <= beta_hat < 1 (beta_hat >= 1 is strong disorder)")
    return -math.log1p(-beta_hat * beta_hat)


def cov_limit(beta_hat: float, zeta: float) -> float:
    """log((1 - beta_hat^2 zeta) / (1 - beta_hat^2))."""
    if not 0.0 <= beta_hat < 1.0:
        raise DomainError("cov_limit needs 0 <= beta_hat < 1")
    if not 0.0 <= zeta <= 1.0:
        raise DomainError("zeta must lie in [0, 1]")
    b2 = beta_hat * beta_hat
    return math.log1p(-b2 * zeta) - math.log1p(-b2)


@dataclass(frozen=True)
class LimitLaw:
    beta_hat: float

    def __post_init__(self):
        sigma_sq(self.beta_hat)

    @property
    def sigma_sq(self) -> float:
        return sigma_sq(self.beta_hat)

    @property
    def mean_log(self) -> float:
        return -0.5 * self.sigma_sq

    @property
    def second_moment(self) -> float:
        return 1.0 / (1.0 - self.beta_hat**2)


def limit_sampler(law: LimitLaw, seed, size: int | None = None):
    """Draws of exp(sigma G - sigma^2 / 2)."""
    rng = np.random.default_rng(seed)
    s2 = law.sigma_sq
    g = rng.standard_normal(size)
    out = np.exp(math.sqrt(s2) * g - 0.5 * s2)
    return float(out) if size is None else out


@dataclass(frozen=True)
class CovKernel:
    """Covariance kernel of the field fluctuations in dimension d.

    For d = 0 the constant c is the local-limit constant of the renewal
    (sqrt(n) q_n -> c); it defaults to the value for c_f n^{-3/2}.
    """

    d: int
    c: float | None = None

    def __post_init__(self):
        if self.d not in (0, 1, 2):
            raise ValueError("d must be 0, 1 or 2")

    @property
    def const(self) -> float:
        return renewal_llt_constant() if self.c is None else float(self.c)


def _split(ck: CovKernel, p):
    if ck.d == 0:
        t = p if np.isscalar(p) else np.asarray(p).reshape(-1)[-1]
        return np.zeros(0), float(t)
    x, t = p
    return np.atleast_1d(np.asarray(x, dtype=float)), float(t)


def _g(d: int, y2):
    # density at a point with squared norm y2
    if d == 2:
        return np.exp(-0.5 * y2) / (2.0 * math.pi)
    return 1.0 / (math.pi * (1.0 + y2))


def _kernel_arrays(ck: CovKernel, dx2, t1, t2):
    """Vectorised closed forms; dx2 is the squared spatial distance."""
    a = np.abs(t1 - t2)
    b = 2.0 - t1 - t2
    if ck.d == 0:
        c2 = ck.const**2
        return 2.0 * c2 * np.log((np.sqrt(1.0 - t1) + np.sqrt(1.0 - t2)) / np.sqrt(a))
    if ck.d == 1:
        return (np.log(b * b + dx2) - np.log(a * a + dx2)) / (4.0 * math.pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        hi = np.where(dx2 > 0, special.exp1(dx2 / (2.0 * b)), np.inf)
        lo = np.where(a > 0, special.exp1(dx2 / (2.0 * np.where(a > 0, a, 1.0))), 0.0)
        pure = np.log(b / np.where(a > 0, a, 1.0))
        return np.where(dx2 > 0, hi - lo, pure) / (4.0 * math.pi)


def kernel_K(ck: CovKernel, p1, p2, method: str = "closed") -> float:
    """K(p1, p2); method "quad" integrates the defining s-integral numerically."""
    x1, t1 = _split(ck, p1)
    x2, t2 = _split(ck, p2)
    if not (0.0 <= t1 <= 1.0 and 0.0 <= t2 <= 1.0):
        raise DomainError("times must lie in [0, 1]")
    dx2 = float(np.sum((x1 - x2) ** 2))
    if t1 == t2 and dx2 == 0.0:
        raise DiagonalError("K diverges on the diagonal")
    if method == "closed":
        return float(_kernel_arrays(ck, dx2, t1, t2))
    lo, hi = max(t1, t2), 1.0
    if ck.d == 0:
        c2 = ck.const**2
        if lo >= hi:
            return 0.0
        # s = lo + u^2 removes the inverse square-root endpoint
        f = lambda u: 2.0 * u * c2 / math.sqrt((lo + u * u - t1) * (lo + u * u - t2)) if u > 0 else (
            2.0 * c2 / math.sqrt(abs(t1 - t2)) if t1 != t2 else 2.0 * c2
        )
        val, _ = integrate.quad(f, 0.0, math.sqrt(hi - lo), epsabs=1e-14, epsrel=1e-13, limit=200)
        return val
    a, b = abs(t1 - t2), 2.0 - t1 - t2
    d = ck.d

    def integrand(s):
        return 0.5 / s * _g(d, dx2 / s ** (2.0 / d))

    if a == 0.0:
        # integrable at 0 because dx2 > 0
        val, _ = integrate.quad(integrand, 0.0, b, epsabs=1e-14, epsrel=1e-12, limit=400)
    else:
        # log-spaced breakpoints keep the 1/s scale resolved
        pts = np.geomspace(a, b, 8)
        val = sum(
            integrate.quad(integrand, lo_, hi_, epsabs=1e-15, epsrel=1e-12, limit=200)[0]
            for lo_, hi_ in zip(pts[:-1], pts[1:])
        )
    return float(val)


# ---------------------------------------------------------------------------
# sigma_psi quadrature


def _gl(n: int, lo: float, hi: float):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w


def _directions(D: int, n: int, p1: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Quadrature directions on the unit sphere in D dims with weights.

    D = 1: the two rays; D = 2: angle sectors split at the box corners
    seen from p1; D = 3: Gauss in cos(theta) times sectors in phi.
    """
    if D == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if D == 2:
        corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]]) - p1
        cut = np.sort(np.mod(np.arctan2(corners[:, 1], corners[:, 0]), 2 * math.pi))
        edges = np.concatenate([cut, [cut[0] + 2 * math.pi]])
        ang, wt = [], []
        for a0, a1 in zip(edges[:-1], edges[1:]):
            if a1 - a0 <= 0:
                continue
            x, w = _gl(n, a0, a1)
            ang.append(x)
            wt.append(w)
        ang = np.concatenate(ang)
        return np.stack([np.cos(ang), np.sin(ang)], axis=1), np.concatenate(wt)
    ct, wct = _gl(n, -1.0, 1.0)
    ph, wph = _gl(2 * n, 0.0, 2 * math.pi)
    CT, PH = np.meshgrid(ct, ph, indexing="ij")
    ST = np.sqrt(1.0 - CT**2)
    dirs = np.stack([ST * np.cos(PH), ST * np.sin(PH), CT], axis=-1).reshape(-1, 3)
    return dirs, np.outer(wct, wph).reshape(-1)


def _ray_exit(p1: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = np.where(dirs > 0, (hi - p1) / dirs, np.inf)
        t_lo = np.where(dirs < 0, (lo - p1) / dirs, np.inf)
    return np.min(np.minimum(t_hi, t_lo), axis=1)


def _psi_K_psi(ck: CovKernel, psi: FieldWeight, n: int) -> float:
    d = ck.d
    D = d + 1
    lo = np.asarray(psi.lower, dtype=float)
    hi = np.asarray(psi.upper, dtype=float)
    if lo[-1] < 0.0 or hi[-1] > 1.0:
        raise DomainError("psi time support must lie in [0, 1]")
    nodes, weights = [], []
    for j in range(D):
        x, w = _gl(n, lo[j], hi[j])
        nodes.append(x)
        weights.append(w)
    P1 = np.stack(np.meshgrid(*nodes, indexing="ij"), axis=-1).reshape(-1, D)
    W1 = np.prod(np.stack(np.meshgrid(*weights, indexing="ij"), axis=-1).reshape(-1, D), axis=1)
    f1 = psi(P1[:, :d], P1[:, d])
    keep = f1 != 0.0
    P1, W1, f1 = P1[keep], W1[keep], f1[keep]
    u, wu = _gl(n, 0.0, 1.0)
    total = 0.0
    for p, w_p, fp in zip(P1, W1, f1):
        dirs, wd = _directions(D, n, p, lo, hi)
        rmax = _ray_exit(p, dirs, lo, hi)
        ok = rmax > 0
        dirs, wd, rmax = dirs[ok], wd[ok], rmax[ok]
        # rho = rmax u^2 clusters nodes at the singular centre
        rho = rmax[:, None] * u[None, :] ** 2
        jac = (rmax[:, None] * 2.0 * u[None, :]) * rho ** (D - 1)
        P2 = p[None, None, :] + rho[..., None] * dirs[:, None, :]
        P2f = P2.reshape(-1, D)
        f2 = psi(P2f[:, :d], np.clip(P2f[:, d], 0.0, 1.0))
        dx2 = np.sum((P2f[:, :d] - p[:d]) ** 2, axis=1)
        t2 = np.clip(P2f[:, d], 0.0, 1.0)
        Kv = _kernel_arrays(ck, dx2, np.full(len(t2), p[d]), t2)
        Kv = np.where(f2 != 0.0, Kv, 0.0)
        inner = np.sum((wd[:, None] * wu[None, :] * jac).reshape(-1) * Kv * f2)
        total += w_p * fp * inner
    return total


def sigma_psi_quadrature(
    ck: CovKernel,
    law: LimitLaw,
    psi: FieldWeight,
    n: int | None = None,
    rtol: float = 1e-4,
    max_level: int = 4,
) -> tuple[float, float]:
    """(beta_hat^2 / (1 - beta_hat^2)) double integral of psi K psi.

    The inner integral runs in polar coordinates centred at the outer node,
    with radial nodes clustered at the log-singular centre. The node count
    doubles until two successive levels agree to ``rtol``; returns the
    value and the last difference as an error estimate. Cost grows like
    n^{2(d+1)}, so d = 2 is only practical at loose tolerances.
    """
    if psi.dim != ck.d:
        raise ValueError("psi dimension does not match kernel")
    if n is None:
        n = {0: 24, 1: 8, 2: 4}[ck.d]
    pref = law.beta_hat**2 / (1.0 - law.beta_hat**2)
    prev = pref * _psi_K_psi(ck, psi, n)
    for _ in range(max_level):
        n *= 2
        cur = pref * _psi_K_psi(ck, psi, n)
        err = abs(cur - prev)
        if err <= rtol * max(abs(cur), 1e-300) or cur == 0.0:
            if cur < -max(err, 1e-12):
                raise QuadratureError("negative variance: kernel not positive semidefinite", (prev, cur))
            return max(cur, 0.0), err
        prev = cur
    raise QuadratureError("quadrature did not converge", (prev, cur))


# ---------------------------------------------------------------------------
# finite-M block limit


def block_second_moment(M: int, beta_hat: float, K: int) -> float:
    """E[(Z^{(M,K)})^2] = 1 + sum_{k<=K} beta_hat^{2k} #sharp_k / M^k."""
    return 1.0 + sum(beta_hat ** (2 * k) * count_sharp(M, k) / M**k for k in range(1, K + 1))


def block_limit_sampler(
    M: int,
    beta_hat: float,
    K: int,
    seed: int,
    size: int = 1,
    max_sequences: int = 2_000_000,
    chunk: int = 500,
    first_sample: int = 0,
) -> np.ndarray:
    """Draws of 1 + sum_{k<=K} beta_hat^k M^{-k/2} sum_{i sharp} prod_l zeta_{i^(l)}.

    Each dominated piece gets its own standard Gaussian, produced by a keyed
    hash of (seed, sample index, piece), so draws do not depend on the chunk
    size or on the enumeration order.
    """
    if not 0.0 <= beta_hat < 1.0:
        raise DomainError("block_limit_sampler needs beta_hat < 1")
    total_seq = sum(count_sharp(M, k) for k in range(1, K + 1))
    if total_seq > max_sequences:
        raise EnumerationError(f"{total_seq} sharp sequences exceed the cap {max_sequences}")
    coef = [beta_hat**k * M ** (-0.5 * k) for k in range(K + 1)]
    out = np.empty(size)
    for c0 in range(0, size, chunk):
        idx = np.arange(first_sample + c0, first_sample + min(size, c0 + chunk), dtype=np.int64)
        out[c0 : c0 + len(idx)] = _block_chunk(M, K, seed, idx, coef)
    return out


def _block_chunk(M: int, K: int, seed: int, idx: np.ndarray, coef: list) -> np.ndarray:
    cache: dict = {}

    def zeta(piece: tuple) -> np.ndarray:
        z = cache.get(piece)
        if z is None:
            z = omega_values(seed, idx, len(piece), [np.int64(v) for v in piece])
            cache[piece] = z
        return z

    acc = np.ones(len(idx))

    def dfs(prod: np.ndarray, piece: tuple, used: list, depth: int) -> None:
        acc.__iadd__(coef[depth] * prod * zeta(piece))
        if depth == K:
            return
        for a in range(1, M + 1):
            if any(abs(a - u) < 2 for u in used):
                continue
            used.append(a)
            if a > piece[0]:
                dfs(prod * zeta(piece), (a,), used, depth + 1)
            else:
                dfs(prod, piece + (a,), used, depth + 1)
            used.pop()

    ones = np.ones(len(idx))
    for a in range(1, M + 1):
        dfs(ones, (a,), [a], 1)
    return acc
