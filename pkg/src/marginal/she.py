"""Regularised 2d stochastic heat equation.

Two routes: a discrete-polymer surrogate (an SRW2D partition surface read
at rescaled space-time points) and a small explicit Euler-Maruyama solver
on a periodic grid, used only as a qualitative cross-check.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .disorder import DisorderLaw, EtaParams, omega_values
from .kernels import ModelKind, build_kernel, overlap_table
from .partition import partition_batch

__all__ = [
    "SheError",
    "StabilityError",
    "Mollifier",
    "SheRun",
    "SheResult",
    "beta_eps",
    "she_surrogate",
    "she_grid_solve",
    "write_snapshot",
    "read_snapshot",
]


class SheError(ValueError):
    pass


class StabilityError(ArithmeticError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} at step {step}")
        self.step = step


def beta_eps(eps: float, beta_hat: float) -> float:
    """beta_hat sqrt(2 pi / log(1 / eps))."""
    if not 0.0 < eps < 1.0:
        raise SheError("eps must lie in (0, 1)")
    return beta_hat * math.sqrt(2.0 * math.pi / math.log(1.0 / eps))


def _bump(r2: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r2, dtype=float)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@dataclass(frozen=True)
class Mollifier:
    """Normalised C^infinity bump of the given radius on R^2."""

    radius: float = 1.0

    @property
    def _mass(self) -> float:
        val, _ = integrate.quad(lambda r: 2.0 * math.pi * r * math.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0)
        return val * self.radius**2

    def density(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1) / self.radius**2
        return _bump(r2) / self._mass

    @property
    def norm_sq(self) -> float:
        """||j||_2^2."""
        m = self._mass / self.radius**2
        val, _ = integrate.quad(lambda r: 2.0 * math.pi * r * math.exp(-2.0 / (1.0 - r * r)), 0.0, 1.0)
        return val / (m * m * self.radius**2)

    def stencil(self, h: float, eps: float) -> np.ndarray:
        """Weights of j_eps = eps^{-2} j(./eps) at grid offsets, summing to 1."""
        reach = int(math.ceil(self.radius * eps / h))
        ax = np.arange(-reach, reach + 1) * h
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        w = self.density(np.stack([X, Y], axis=-1) / eps)
        if w.sum() <= 0.0:
            raise SheError("mollifier support is below the grid spacing")
        return w / w.sum()


def she_surrogate(
    eps: float,
    beta_hat: float,
    points,
    seed: int,
    realizations=(0,),
    law: DisorderLaw = DisorderLaw.GAUSSIAN,
    max_N: int = 4096,
) -> np.ndarray:
    """Polymer values at (floor(x / eps), floor(eps^-2 (1 - t))), N = floor(eps^-2).

    ``points`` is a sequence of (t, (x1, x2)). beta uses the exact overlap,
    beta_hat / sqrt(R_N). Returns shape (B, P).
    """
    if not 0.0 < eps < 1.0:
        raise SheError("eps must lie in (0, 1)")
    N = int(math.floor(eps**-2))
    if N > max_N:
        raise SheError(f"N = {N} exceeds the SRW2D horizon budget {max_N}")
    starts = []
    for t, x in points:
        if not 0.0 <= t <= 1.0:
            raise SheError("times must lie in [0, 1]")
        xl = tuple(int(math.floor(c / eps)) for c in x)
        starts.append((xl, int(math.floor(N * (1.0 - t)))))
    kernel = build_kernel(ModelKind.SRW2D, N)
    ov = overlap_table(kernel)
    beta = beta_hat / math.sqrt(ov.R_at(N))
    params = EtaParams.from_law(law, beta)
    radius = max(0, max(max(abs(x[0] + x[1]), abs(x[0] - x[1])) - n for x, n in starts))
    keep = sorted({n for _, n in starts})
    surface = partition_batch(kernel, seed, realizations, law, params, N, radius=radius, keep=keep)
    out = np.empty((surface.batch, len(starts)))
    for j, (x, n) in enumerate(starts):
        out[:, j] = surface.value(x, n)
    return out


@dataclass(frozen=True)
class SheRun:
    eps: float
    beta_hat: float
    h: float
    dt: float
    side: float
    seed: int = 0

    @property
    def cells(self) -> int:
        return int(round(self.side / self.h))

    def validate(self, t_end: float) -> None:
        if not 0.0 < self.eps < 1.0:
            raise SheError("eps must lie in (0, 1)")
        if self.dt > 0.25 * self.h * self.h * (1.0 + 1e-12):
            raise StabilityError(f"dt = {self.dt} exceeds h^2 / 4 = {self.h * self.h / 4}")
        if abs(self.cells * self.h - self.side) > 1e-9 * self.side:
            raise SheError("torus side must be a multiple of h")
        if self.side < 4.0 * math.sqrt(max(t_end, 0.0)):
            raise SheError("torus side must be at least 4 sqrt(t_end)")


@dataclass
class SheResult:
    u: np.ndarray
    observables: dict = field(default_factory=dict)
    steps: int = 0
    t_end: float = 0.0


def she_grid_solve(
    run: SheRun,
    mollifier: Mollifier,
    t_end: float,
    observables=("center", "mean"),
    runs: int = 1,
    first_run: int = 0,
    keep_field: bool = True,
) -> SheResult:
    """Explicit Ito Euler-Maruyama for du = (1/2) Lap u dt + beta_eps u (j_eps * dW).

    ``runs`` independent copies are advanced together; run r uses noise keyed
    by (seed, first_run + r, step, cell). u starts from 1.
    """
    run.validate(t_end)
    n = run.cells
    steps = int(math.ceil(t_end / run.dt - 1e-9))
    dt = t_end / steps if steps else 0.0
    beta = beta_eps(run.eps, run.beta_hat)
    w = mollifier.stencil(run.h, run.eps)
    reach = w.shape[0] // 2
    if 2 * reach + 1 > n:
        raise SheError("mollifier stencil wider than the torus")
    # stencil on the torus, centred at 0, as a Fourier multiplier
    kern = np.zeros((n, n))
    for a in range(-reach, reach + 1):
        for b in range(-reach, reach + 1):
            kern[a % n, b % n] += w[a + reach, b + reach]
    kf = np.fft.rfft2(kern)
    idx = np.arange(n)
    I, J = np.meshgrid(idx, idx, indexing="ij")
    r = np.arange(first_run, first_run + runs, dtype=np.int64)[:, None, None]
    u = np.ones((runs, n, n))
    scale = math.sqrt(dt) / run.h
    lap_c = 0.5 * dt / (run.h * run.h)
    for k in range(steps):
        lap = np.roll(u, 1, 1) + np.roll(u, -1, 1) + np.roll(u, 1, 2) + np.roll(u, -1, 2) - 4.0 * u
        if beta != 0.0:
            xi = omega_values(run.seed, r, k + 1, [I[None], J[None]], DisorderLaw.GAUSSIAN)
            noise = np.fft.irfft2(np.fft.rfft2(xi) * kf, s=(n, n)) * scale
            # overflow is caught by the finiteness check below
            with np.errstate(over="ignore", invalid="ignore"):
                u = u + lap_c * lap + beta * u * noise
        else:
            u = u + lap_c * lap
        if not np.all(np.isfinite(u)):
            raise StabilityError("non-finite field", k + 1)
    obs = {}
    for name in observables:
        if name == "center":
            obs[name] = u[:, 0, 0].copy()
        elif name == "mean":
            obs[name] = u.mean(axis=(1, 2))
        else:
            raise SheError(f"unknown observable {name!r}")
    return SheResult(u if keep_field else np.empty(0), obs, steps, t_end)


def write_snapshot(path: "str | os.PathLike", u: np.ndarray, eps: float, seed: int, t: float = 0.0) -> None:
    """One text header line, then the grid as little-endian float64 in C order."""
    u = np.asarray(u, dtype="<f8")
    if u.ndim != 2:
        raise SheError("snapshot expects a 2d grid")
    header = f"MRGSNAP1 nx={u.shape[0]} ny={u.shape[1]} eps={eps!r} seed={seed} t={t!r}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(u).tobytes())


def read_snapshot(path: "str | os.PathLike") -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if not header or header[0] != "MRGSNAP1":
            raise SheError(f"{path}: not a snapshot file")
        meta = dict(item.split("=", 1) for item in header[1:])
        nx, ny = int(meta["nx"]), int(meta["ny"])
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != nx * ny:
        raise SheError(f"{path}: expected {nx * ny} values, found {data.size}")
    info = {"eps": float(meta["eps"]), "seed": int(meta["seed"]), "t": float(meta["t"])}
    return data.reshape(nx, ny).astype(np.float64), info
