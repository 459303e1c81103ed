"""Partition functions for all starting points, exact second and cross moments,
and the rescaled field functional.

Every sweep runs backward in time from Z_N = 1 and is vectorised over a
block of disorder realizations (leading axis of every stored array).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sfft

from .disorder import DisorderField, DisorderLaw, EtaParams, batch_xi
from .kernels import (
    LatticeKernel,
    ModelKind,
    OverlapTable,
    RangeError,
    cauchy_norm_const,
    cauchy_tail,
    srw2d_mass,
)

__all__ = [
    "PartitionSurface",
    "FieldWeight",
    "BlowUpError",
    "CoverageError",
    "BudgetError",
    "polymer_Z_all_starts",
    "pinning_Z_all_starts",
    "partition_batch",
    "pinning_batch",
    "srw2d_batch",
    "cauchy_batch",
    "second_moment_exact",
    "second_moment_increments",
    "cross_moment_exact",
    "meeting_weights",
    "field_functional_J",
    "field_variance_exact",
    "as_eta_params",
]

BLOWUP_LIMIT = 1e12
DEFAULT_CELL_BUDGET = 400_000_000
_CDQ_LEAF = 64


class BlowUpError(ArithmeticError):
    """Second-moment recursion exceeded the L^2 blow-up guard."""


class CoverageError(ValueError):
    pass


class BudgetError(MemoryError):
    pass


def as_eta_params(beta, law: DisorderLaw = DisorderLaw.GAUSSIAN) -> EtaParams:
    if isinstance(beta, EtaParams):
        return beta
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return EtaParams.from_law(law, float(beta))


@dataclass(eq=False)
class PartitionSurface:
    """Z(x, t) for a block of realizations.

    ``layers[t]`` has shape (B, ...) and covers, per model,

    * RENEWAL_HALF: a single value, Z(t);
    * CAUCHY1D: x in [-window, window];
    * SRW2D: the rotated square |x1 + x2|, |x1 - x2| <= radius + t,
      indexed [u + h, v + h] with h = radius + t. Only lattice cells of
      the parity classes in ``classes`` hold valid values: class c is the
      set of cells with u = v = c + N - t (mod 2).

    Layers not requested at build time are None.
    """

    model: ModelKind
    N: int
    params: EtaParams
    layers: list
    radius: int = 0
    realizations: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))
    classes: tuple = (0, 1)

    @property
    def beta(self) -> float:
        return self.params.beta

    @property
    def batch(self) -> int:
        return len(self.realizations)

    def half_width(self, t: int) -> int:
        if self.model is ModelKind.SRW2D:
            return self.radius + t
        return self.radius

    def _layer(self, t: int) -> np.ndarray:
        if not 0 <= t <= self.N:
            raise RangeError(f"t={t} outside 0..{self.N}")
        layer = self.layers[t]
        if layer is None:
            raise CoverageError(f"time layer t={t} was not stored")
        return layer

    def covers(self, x, t: int) -> bool:
        if self.model is ModelKind.RENEWAL_HALF:
            return 0 <= t <= self.N and self.layers[t] is not None
        if not 0 <= t <= self.N or self.layers[t] is None:
            return False
        h = self.half_width(t)
        if self.model is ModelKind.CAUCHY1D:
            return abs(int(np.atleast_1d(x)[0])) <= h
        x1, x2 = (int(c) for c in x)
        return max(abs(x1 + x2), abs(x1 - x2)) <= h and srw2d_class(x, t, self.N) in self.classes

    def value(self, x=None, t: int = 0):
        """Z(x, t); an array over the batch, or a float for a single realization."""
        layer = self._layer(t)
        if self.model is ModelKind.RENEWAL_HALF:
            out = layer
        else:
            if not self.covers(x, t):
                raise CoverageError(f"point {(x, t)} outside the stored window")
            h = self.half_width(t)
            if self.model is ModelKind.CAUCHY1D:
                out = layer[:, int(np.atleast_1d(x)[0]) + h]
            else:
                x1, x2 = (int(c) for c in x)
                out = layer[:, x1 + x2 + h, x1 - x2 + h]
        return float(out[0]) if self.batch == 1 else np.array(out)

    def grid(self, t: int):
        """Lattice coordinates and values of layer t in model coordinates.

        Returns (coords, values) where coords has shape (P, d) and values
        (B, P); for SRW2D only cells on the true lattice are returned.
        """
        layer = self._layer(t)
        if self.model is ModelKind.RENEWAL_HALF:
            return np.zeros((1, 0), dtype=np.int64), layer.reshape(self.batch, 1)
        h = self.half_width(t)
        if self.model is ModelKind.CAUCHY1D:
            return np.arange(-h, h + 1)[:, None], layer
        u = np.arange(-h, h + 1)
        uu, vv = np.meshgrid(u, u, indexing="ij")
        par = (self.N - t) % 2
        ok = np.zeros(uu.shape, dtype=bool)
        for c in self.classes:
            ok |= ((uu - c - par) % 2 == 0) & ((vv - c - par) % 2 == 0)
        coords = np.stack([(uu[ok] + vv[ok]) // 2, (uu[ok] - vv[ok]) // 2], axis=1)
        return coords, layer[:, ok]


def srw2d_class(x, t: int, N: int) -> int:
    """Parity class (see PartitionSurface) of the SRW2D point (x, t) for horizon N."""
    return (int(x[0]) + int(x[1]) - (N - t)) % 2


def _keep_set(N: int, keep) -> set:
    if keep == "all":
        return set(range(N + 1))
    if keep == "start":
        return {0}
    return {int(t) for t in keep}


def srw2d_batch(
    seed: int,
    realizations: np.ndarray,
    law: DisorderLaw,
    params: EtaParams,
    N: int,
    radius: int = 0,
    keep="all",
    cell_budget: int = DEFAULT_CELL_BUDGET,
    classes=(0, 1),
) -> list:
    """Backward sweep for the 2d simple random walk on the rotated grid.

    In u = x1 + x2, v = x1 - x2 the walk moves by independent +-1 steps,
    so one step is the average over the four diagonal shifts. The layer at
    time t is computed on |u|, |v| <= radius + t, which is exactly the set
    of cells whose value does not depend on anything outside the sweep.
    Cells with u + v odd are off the lattice; they carry xi = 1 and never
    mix with lattice cells. Lattice cells split further into two classes
    (u and v both even, or both odd) that alternate in time and never mix;
    disorder is drawn only on the classes listed in ``classes``.
    """
    r = np.asarray(realizations, dtype=np.int64)
    B = len(r)
    classes = tuple(sorted({int(c) % 2 for c in classes}))
    cells = B * sum((2 * (radius + t) + 1) ** 2 for t in range(N + 1))
    if cells > cell_budget:
        raise BudgetError(f"SRW2D sweep needs {cells} cells > budget {cell_budget}")
    keep = _keep_set(N, keep)
    layers: list = [None] * (N + 1)
    h = radius + N
    Z = np.ones((B, 2 * h + 1, 2 * h + 1))
    if N in keep:
        layers[N] = Z
    for n in range(N - 1, -1, -1):
        hp = radius + n + 1
        u = np.arange(-hp, hp + 1)
        uu, vv = np.meshgrid(u, u, indexing="ij")
        par = (N - n - 1) % 2
        ok = np.zeros(uu.shape, dtype=bool)
        for c in classes:
            ok |= ((uu - c - par) % 2 == 0) & ((vv - c - par) % 2 == 0)
        x1 = (uu[ok] + vv[ok]) // 2
        x2 = (uu[ok] - vv[ok]) // 2
        xi = batch_xi(seed, r[:, None], law, params, n + 1, [x1[None], x2[None]])
        Y = Z.copy()
        Y[:, ok] *= xi
        Z = 0.25 * (Y[:, :-2, :-2] + Y[:, :-2, 2:] + Y[:, 2:, :-2] + Y[:, 2:, 2:])
        if n in keep:
            layers[n] = Z
    return layers


def cauchy_batch(
    kernel: LatticeKernel,
    seed: int,
    realizations: np.ndarray,
    law: DisorderLaw,
    params: EtaParams,
    N: int,
    window: int | None = None,
    keep="all",
    cell_budget: int = DEFAULT_CELL_BUDGET,
) -> tuple[list, int]:
    """Backward sweep for the discrete Cauchy walk on [-W, W].

    Jumps leaving the window continue with weight 1 (no disorder), so
    Z_n(x) = sum_{y in W} p(y - x) xi(n+1, y) Z_{n+1}(y) + P(jump leaves W).
    """
    W = int(kernel.window_radius[min(N, kernel.n_max)]) if window is None else int(window)
    r = np.asarray(realizations, dtype=np.int64)
    B = len(r)
    if B * (N + 1) * (2 * W + 1) > cell_budget:
        raise BudgetError("Cauchy sweep exceeds the cell budget")
    keep = _keep_set(N, keep)
    c = cauchy_norm_const()
    z = np.arange(-2 * W, 2 * W + 1, dtype=float)
    p = c / (1.0 + z * z)
    xs = np.arange(-W, W + 1)
    # P(x + jump leaves [-W, W]) from the two one-sided tails
    exit_mass = 0.5 * (cauchy_tail(W - xs) + cauchy_tail(W + xs))
    L = 2 * W + 1
    nf = sfft.next_fast_len(L + len(p) - 1)
    pf = sfft.rfft(p, nf)
    layers: list = [None] * (N + 1)
    Z = np.ones((B, L))
    if N in keep:
        layers[N] = Z
    for n in range(N - 1, -1, -1):
        xi = batch_xi(seed, r[:, None], law, params, n + 1, [xs[None]])
        Y = xi * Z
        if L <= 256:
            conv = np.stack([np.convolve(y, p) for y in Y])
        else:
            conv = sfft.irfft(sfft.rfft(Y, nf, axis=1) * pf, nf, axis=1)
        # p is even, so sum_y Y(y) p(x - y) sits at conv index x + 3W
        Z = conv[:, 2 * W : 2 * W + L] + exit_mass
        if n in keep:
            layers[n] = Z
    return layers, W


def _pinning_cdq(f: np.ndarray, S: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Z(t) = S(N - t) + sum_{m >= 1} f(m) xi(t + m) Z(t + m) for a batch.

    Online convolution by divide and conquer: the right half of each range
    is solved first and its contribution to the left half is added by one
    FFT product, giving O(N log^2 N) per realization.
    """
    B, N1 = xi.shape
    N = N1 - 1
    Z = np.empty((B, N1))
    Z[:, N] = 1.0
    acc = np.zeros((B, N1))
    Wt = np.zeros((B, N1))

    def solve(lo: int, hi: int) -> None:
        if hi - lo <= _CDQ_LEAF:
            for t in range(hi - 1, lo - 1, -1):
                Z[:, t] = S[N - t] + acc[:, t] + Wt[:, t + 1 : hi] @ f[1 : hi - t]
                Wt[:, t] = xi[:, t] * Z[:, t]
            return
        mid = (lo + hi) // 2
        solve(mid, hi)
        a = Wt[:, mid:hi]
        L2, L1 = hi - mid, mid - lo
        h = f[1 : hi - lo + 1]
        nf = sfft.next_fast_len(L1 + L2 + len(h))
        c = sfft.irfft(sfft.rfft(a[:, ::-1], nf, axis=1) * sfft.rfft(h, nf), nf, axis=1)
        i = np.arange(L1)
        acc[:, lo:mid] += c[:, L1 - i - 2 + L2]
        solve(lo, mid)

    solve(0, N + 1)
    # solve refers to itself; drop the cycle so the work arrays free promptly
    del solve
    return Z


def pinning_batch(
    kernel: LatticeKernel,
    seed: int,
    realizations: np.ndarray,
    law: DisorderLaw,
    params: EtaParams,
    N: int,
    xi: np.ndarray | None = None,
) -> np.ndarray:
    """Z(t), t = 0..N, for each realization; shape (B, N + 1)."""
    if N > kernel.n_max:
        raise RangeError(f"N={N} beyond kernel horizon {kernel.n_max}")
    r = np.asarray(realizations, dtype=np.int64)
    if xi is None and params.beta == 0.0:
        return np.ones((len(r), N + 1))
    if xi is None:
        xi = np.empty((len(r), N + 1))
        xi[:, 0] = 1.0
        xi[:, 1:] = batch_xi(seed, r[:, None], law, params, np.arange(1, N + 1)[None, :])
    f = kernel.step[: N + 1]
    S = kernel.survival[: N + 1]
    return _pinning_cdq(f, S, xi)


def partition_batch(
    kernel: LatticeKernel,
    seed: int,
    realizations,
    law: DisorderLaw,
    params: EtaParams,
    N: int,
    radius: int = 0,
    keep="all",
    window: int | None = None,
    classes=(0, 1),
) -> PartitionSurface:
    """Build a surface for a block of realizations of any model.

    ``classes`` restricts an SRW2D sweep to the given parity classes (see
    :func:`srw2d_class`), which cuts the disorder draws by half.
    """
    r = np.atleast_1d(np.asarray(realizations, dtype=np.int64))
    if params.beta < 0:
        raise ValueError("beta must be nonnegative")
    if N < 1:
        raise ValueError("N must be >= 1")
    if params.beta == 0.0:
        return _unit_surface(kernel, N, r, params, radius, keep, window, classes)
    if kernel.model is ModelKind.RENEWAL_HALF:
        Z = pinning_batch(kernel, seed, r, law, params, N)
        keep_t = _keep_set(N, keep)
        layers = [Z[:, t] if t in keep_t else None for t in range(N + 1)]
        return PartitionSurface(kernel.model, N, params, layers, 0, r)
    if kernel.model is ModelKind.SRW2D:
        classes = tuple(sorted({int(c) % 2 for c in classes}))
        layers = srw2d_batch(seed, r, law, params, N, radius, keep, classes=classes)
        return PartitionSurface(kernel.model, N, params, layers, radius, r, classes)
    layers, W = cauchy_batch(kernel, seed, r, law, params, N, window, keep)
    return PartitionSurface(kernel.model, N, params, layers, W, r)


def _unit_surface(kernel, N, r, params, radius, keep, window, classes) -> PartitionSurface:
    # beta = 0: every xi is 1, so Z is identically 1 (skip the float telescoping)
    keep_t = _keep_set(N, keep)
    B = len(r)
    model = kernel.model
    if model is ModelKind.RENEWAL_HALF:
        layers = [np.ones(B) if t in keep_t else None for t in range(N + 1)]
        return PartitionSurface(model, N, params, layers, 0, r)
    if model is ModelKind.SRW2D:
        layers = [np.ones((B, 2 * (radius + t) + 1, 2 * (radius + t) + 1)) if t in keep_t else None for t in range(N + 1)]
        return PartitionSurface(model, N, params, layers, radius, r, tuple(sorted({int(c) % 2 for c in classes})))
    W = int(kernel.window_radius[min(N, kernel.n_max)]) if window is None else int(window)
    layers = [np.ones((B, 2 * W + 1)) if t in keep_t else None for t in range(N + 1)]
    return PartitionSurface(model, N, params, layers, W, r)


def polymer_Z_all_starts(
    kernel: LatticeKernel,
    field: DisorderField,
    beta,
    N: int,
    radius: int = 0,
    window: int | None = None,
    keep="all",
) -> PartitionSurface:
    """Z^omega_{N,beta}(x, t) for every start in the window, one realization."""
    if kernel.model is ModelKind.RENEWAL_HALF:
        raise ValueError("use pinning_Z_all_starts for renewal kernels")
    params = as_eta_params(beta, field.law)
    return partition_batch(
        kernel, field.seed, [field.realization_index], field.law, params, N, radius, keep, window
    )


def pinning_Z_all_starts(kernel: LatticeKernel, field: DisorderField, beta, N: int) -> PartitionSurface:
    if kernel.model is not ModelKind.RENEWAL_HALF:
        raise ValueError("pinning_Z_all_starts needs a renewal kernel")
    params = as_eta_params(beta, field.law)
    return partition_batch(kernel, field.seed, [field.realization_index], field.law, params, N)


def _gamma(eta) -> float:
    g = eta.gamma if isinstance(eta, EtaParams) else float(eta)
    if g < 0:
        raise ValueError("gamma must be nonnegative")
    return g


def second_moment_increments(overlap: OverlapTable, eta, N: int) -> np.ndarray:
    """c(n) = gamma (r_n + sum_{m<n} r_{n-m} c(m)) for n = 0..N (c(0) = 0).

    E[Z_L^2] = 1 + sum_{n <= L} c(n) for every L <= N.
    """
    if not 0 <= N <= overlap.n_max:
        raise RangeError(f"N={N} outside overlap table 0..{overlap.n_max}")
    g = _gamma(eta)
    r = overlap.r
    c = np.zeros(N + 1)
    running = 1.0
    for n in range(1, N + 1):
        c[n] = g * (r[n] + np.dot(r[n - 1 : 0 : -1], c[1:n]))
        running += c[n]
        if not running < BLOWUP_LIMIT:
            raise BlowUpError(f"L^2 blow-up: E[Z^2] exceeds {BLOWUP_LIMIT:g} at n={n}")
    return c


def second_moment_exact(overlap: OverlapTable, eta, N: int) -> float:
    """E[Z_{N,beta}^2] from the overlap-chain recursion (no sampling)."""
    c = second_moment_increments(overlap, eta, N)
    return 1.0 + math.fsum(c)


def _point(X, d: int):
    if d == 0:
        t = X if np.isscalar(X) else X[-1]
        return (), int(t)
    x, t = X
    return tuple(int(c) for c in np.atleast_1d(x)), int(t)


def meeting_weights(kernel: LatticeKernel, N: int, X, Xp) -> np.ndarray:
    """w(n) = sum_z q_{n-t}(z - x) q_{n-t'}(z - x') for n = 0..N.

    For the symmetric walks this is q_{2n-t-t'}(x' - x); for renewals it is
    q_{n-t} q_{n-t'}.
    """
    d = kernel.dim
    x, t = _point(X, d)
    xp, tp = _point(Xp, d)
    if not (0 <= t < N and 0 <= tp < N):
        raise RangeError("start times must satisfy 0 <= t < N")
    w = np.zeros(N + 1)
    lo = max(t, tp) + 1
    if kernel.model is ModelKind.RENEWAL_HALF:
        q = kernel.renewal_q
        if N > kernel.n_max:
            raise RangeError(f"N={N} beyond kernel horizon {kernel.n_max}")
        n = np.arange(lo, N + 1)
        w[lo:] = q[n - t] * q[n - tp]
        return w
    dx = tuple(b - a for a, b in zip(x, xp))
    for n in range(lo, N + 1):
        steps = 2 * n - t - tp
        if kernel.model is ModelKind.SRW2D:
            w[n] = float(srw2d_mass(steps, np.array(dx)))
        else:
            if steps > kernel.n_max:
                raise RangeError(f"Cauchy meeting weight needs q_{steps}; kernel horizon {kernel.n_max}")
            w[n] = kernel.q_at(steps, dx[0])
    return w


def cross_moment_exact(kernel: LatticeKernel, overlap: OverlapTable, eta, N: int, X, Xp) -> float:
    """E[Z(X) Z(X')] = 1 + sum_m gamma w(m) E[Z_{N-m}^2] over first meetings m."""
    g = _gamma(eta)
    w = meeting_weights(kernel, N, X, Xp)
    c = second_moment_increments(overlap, g, N)
    tail2 = 1.0 + np.concatenate([[0.0], np.cumsum(c[1:])])  # E[Z_L^2], L = 0..N
    m = np.arange(N + 1)
    terms = g * w * tail2[N - m]
    total = 1.0 + math.fsum(terms)
    if not total < BLOWUP_LIMIT:
        raise BlowUpError("L^2 blow-up in cross moment")
    return total


@dataclass(frozen=True)
class FieldWeight:
    """Test function psi on R^d x [0, 1] with a declared support box.

    ``lower`` and ``upper`` list the box corners, spatial coordinates first
    and time last. ``func(x, t)`` takes x of shape (P, d) and t of shape (P,).
    """

    func: Callable
    lower: Sequence[float]
    upper: Sequence[float]

    @property
    def dim(self) -> int:
        return len(self.lower) - 1

    def __call__(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(len(np.atleast_1d(t)), self.dim)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        pts = np.concatenate([x, t[:, None]], axis=1)
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        out = np.zeros(len(t))
        if inside.any():
            out[inside] = np.asarray(self.func(x[inside], t[inside]), dtype=float)
        return out

    @classmethod
    def constant(cls, d: int, value: float = 1.0, half_width: float = 1.0) -> "FieldWeight":
        return cls(
            lambda x, t: np.full(len(t), value),
            [-half_width] * d + [0.0],
            [half_width] * d + [1.0],
        )

    def scaled(self, a: float) -> "FieldWeight":
        f = self.func
        return FieldWeight(lambda x, t: a * np.asarray(f(x, t)), self.lower, self.upper)

    def __add__(self, other: "FieldWeight") -> "FieldWeight":
        f, g = self.func, other.func
        lo = np.minimum(self.lower, other.lower)
        hi = np.maximum(self.upper, other.upper)
        return FieldWeight(lambda x, t: self(x, t) + other(x, t), lo.tolist(), hi.tolist())


def field_functional_J(surface: PartitionSurface, overlap: OverlapTable, psi: FieldWeight):
    """Riemann sum (1 / (phi(N)^d N)) sum_{x,t} sqrt(R_N) (Z(x,t) - 1) psi(x / phi(N), t / N).

    phi(N) = N^{1/d}; for d = 0 there is no spatial part. Returns one value
    per realization (a float for a single realization).
    """
    N = surface.N
    d = surface.model.dim
    if psi.dim != d:
        raise ValueError(f"psi has spatial dimension {psi.dim}, surface has {d}")
    R_N = overlap.R_at(N)
    phi = float(N) ** (1.0 / d) if d else 1.0
    t_lo = max(0, math.ceil(psi.lower[-1] * N))
    t_hi = min(N, math.floor(psi.upper[-1] * N))
    total = np.zeros(surface.batch)
    missing = []
    for t in range(t_lo, t_hi + 1):
        if d == 0:
            if surface.layers[t] is None:
                missing.append(((), t))
                continue
            wgt = psi(np.zeros((1, 0)), np.array([t / N]))[0]
            if wgt != 0.0:
                total += wgt * (surface.layers[t] - 1.0)
            continue
        lo = [math.ceil(psi.lower[j] * phi) for j in range(d)]
        hi = [math.floor(psi.upper[j] * phi) for j in range(d)]
        need_h = max(abs(lo[0]), abs(hi[0])) + (max(abs(lo[1]), abs(hi[1])) if d == 2 else 0)
        if surface.layers[t] is None or need_h > surface.half_width(t):
            missing.append((tuple(zip(lo, hi)), t))
            continue
        coords, vals = surface.grid(t)
        sel = np.all((coords >= lo) & (coords <= hi), axis=1)
        if not sel.any():
            continue
        wgt = psi(coords[sel] / phi, np.full(int(sel.sum()), t / N))
        total += (vals[:, sel] - 1.0) @ wgt
    if missing:
        raise CoverageError(f"surface does not cover psi support at {len(missing)} layers, first {missing[0]}")
    out = math.sqrt(R_N) * total / (phi**d * N)
    return float(out[0]) if surface.batch == 1 else out


def field_variance_exact(kernel: LatticeKernel, overlap: OverlapTable, eta, N: int, psi: FieldWeight) -> float:
    """Exact Var(J^psi_N) for renewal kernels.

    Cov(Z_t, Z_t') = gamma sum_m q_{m-t} q_{m-t'} E[Z_{N-m}^2], so the double
    sum over start times collapses to
    Var J = (R_N / N^2) gamma sum_m E[Z_{N-m}^2] (sum_{t<m} psi(t/N) q_{m-t})^2.
    """
    if kernel.model is not ModelKind.RENEWAL_HALF:
        raise ValueError("exact field variance is implemented for renewal kernels")
    if psi.dim != 0:
        raise ValueError("psi must be a function of time only")
    g = _gamma(eta)
    c = second_moment_increments(overlap, g, N)
    E2 = 1.0 + np.concatenate([[0.0], np.cumsum(c[1:])])
    t = np.arange(N + 1)
    w = psi(np.zeros((N + 1, 0)), t / N)
    q = kernel.renewal_q[: N + 1].copy()
    q[0] = 0.0
    nf = sfft.next_fast_len(2 * (N + 1))
    conv = sfft.irfft(sfft.rfft(w, nf) * sfft.rfft(q, nf), nf)[: N + 1]  # sum_{t<m} w_t q_{m-t}
    m = np.arange(1, N + 1)
    total = math.fsum(E2[N - m] * conv[m] ** 2)
    return overlap.R_at(N) * g * total / (N * N)
