"""Exact transition kernels, replica overlaps and block partitions.

Three concrete marginally relevant models are supported:

* ``SRW2D``        simple symmetric random walk on Z^2 (d = 2)
* ``CAUCHY1D``     walk on Z with single-step law c_J / (1 + x^2) (d = 1)
* ``RENEWAL_HALF`` renewal with inter-arrival law c_f n^{-3/2} (d = 0)

The SRW2D kernel is stored in factorised form: rotating by 45 degrees,
u = x1 + x2 and v = x1 - x2 perform independent +-1 walks, so
q_n(x) = b_n(u) b_n(v) with b_n the symmetric binomial law.
"""

from __future__ import annotations

import enum
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import signal, special, stats

__all__ = [
    "ModelKind",
    "KernelError",
    "SizingError",
    "TruncationError",
    "RangeError",
    "LatticeKernel",
    "OverlapTable",
    "BlockPartition",
    "build_kernel",
    "overlap_table",
    "beta_schedule",
    "block_boundaries",
    "triple_norm_zeta",
    "llt_diagnostic",
    "cauchy_norm_const",
    "cauchy_tail",
    "renewal_norm_const",
    "renewal_llt_constant",
    "return_probability",
    "srw2d_mass",
    "save_kernel",
    "load_kernel",
    "cached_kernel",
    "CacheFormatError",
]

DEFAULT_MAX_ENTRIES = 50_000_000


class ModelKind(enum.Enum):
    SRW2D = "SRW2D"
    CAUCHY1D = "CAUCHY1D"
    RENEWAL_HALF = "RENEWAL_HALF"

    @property
    def dim(self) -> int:
        return {"SRW2D": 2, "CAUCHY1D": 1, "RENEWAL_HALF": 0}[self.value]

    @classmethod
    def parse(cls, value: "str | ModelKind") -> "ModelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown model {value!r}") from None


class KernelError(Exception):
    pass


class SizingError(KernelError):
    """The requested window does not fit the memory budget."""


class TruncationError(KernelError):
    def __init__(self, message: str, attained: float):
        super().__init__(f"{message} (attained tail mass {attained:.3e})")
        self.attained = attained


class RangeError(KernelError, ValueError):
    pass


def cauchy_norm_const() -> float:
    """c_J with sum_{x in Z} c_J / (1 + x^2) = 1, using sum = pi coth(pi)."""
    return math.tanh(math.pi) / math.pi


def cauchy_tail(radius: int | np.ndarray) -> np.ndarray:
    """Single-step mass outside [-W, W] for the discrete Cauchy law.

    sum_{k >= 0} 1 / ((k + a)^2 + 1) = Im digamma(a + i).
    """
    w = np.asarray(radius, dtype=float)
    return 2.0 * cauchy_norm_const() * special.digamma(w + 1.0 + 1j).imag


def renewal_norm_const() -> float:
    return 1.0 / special.zeta(1.5)


def renewal_llt_constant() -> float:
    """lim sqrt(n) P(n in tau) for f(n) = c_f n^{-3/2}.

    With P(tau_1 > n) ~ 2 c_f n^{-1/2}, renewal theory gives
    u_n ~ n^{-1/2} / (2 pi c_f) = zeta(3/2) / (2 pi) n^{-1/2}.
    """
    return special.zeta(1.5) / (2.0 * math.pi)


def srw2d_mass(n: int, x) -> np.ndarray:
    """P(S_n = x) for the 2d simple random walk, vectorised over x[..., 2]."""
    x = np.asarray(x, dtype=np.int64)
    u = x[..., 0] + x[..., 1]
    v = x[..., 0] - x[..., 1]
    return _binom_half(n, u) * _binom_half(n, v)


def _binom_half(n: int, u) -> np.ndarray:
    # P(U_n = u) for a +-1 walk
    u = np.asarray(u, dtype=np.int64)
    ok = (np.abs(u) <= n) & ((u + n) % 2 == 0)
    k = np.where(ok, (u + n) // 2, 0)
    return np.where(ok, stats.binom.pmf(k, n, 0.5), 0.0)


@dataclass(frozen=True, eq=False)
class LatticeKernel:
    """Transition masses q_n on centred windows, n = 0..n_max.

    ``masses[n]`` holds, per model:

    * SRW2D: the binomial factor b_n(k), k = 0..n (u = 2k - n);
    * CAUCHY1D: q_n(x) for x in [-W_n, W_n];
    * RENEWAL_HALF: a length-1 array with q_n = P(n in tau).

    ``step`` is the single-step law (CAUCHY1D, over [-P, P] with
    P = len(step) // 2 covering every jump between window sites) or the inter-arrival law f(0..n_max) for renewals.
    """

    model: ModelKind
    n_max: int
    tail_tol: float
    masses: tuple
    window_radius: np.ndarray
    tail_mass: np.ndarray
    step: np.ndarray = field(default_factory=lambda: np.zeros(0))
    never_return_mass: float = 0.0
    degenerate: bool = False

    @property
    def dim(self) -> int:
        return self.model.dim

    def _check(self, n: int) -> None:
        if not 0 <= n <= self.n_max:
            raise RangeError(f"n={n} outside kernel horizon 0..{self.n_max}")

    def q(self, n: int):
        """Materialise q_n over its window (scalar for d = 0).

        For SRW2D the array has shape (2n+1, 2n+1) indexed [x1 + n, x2 + n].
        """
        self._check(n)
        if self.model is ModelKind.RENEWAL_HALF:
            return float(self.masses[n][0])
        if self.model is ModelKind.CAUCHY1D:
            return self.masses[n]
        b = self.masses[n]
        full = np.zeros(4 * n + 1)
        full[n::2][: n + 1] = b  # u = -n, -n+2, ..., n at offset u + 2n
        x = np.arange(-n, n + 1)
        u = x[:, None] + x[None, :]
        v = x[:, None] - x[None, :]
        return full[u + 2 * n] * full[v + 2 * n]

    def q_at(self, n: int, x=0) -> float:
        self._check(n)
        if self.model is ModelKind.RENEWAL_HALF:
            return float(self.masses[n][0])
        if self.model is ModelKind.CAUCHY1D:
            x = int(np.asarray(x).reshape(-1)[0])
            w = int(self.window_radius[n])
            return float(self.masses[n][x + w]) if abs(x) <= w else 0.0
        x1, x2 = (int(c) for c in np.asarray(x).reshape(2))
        b = self.masses[n]

        def fac(u):
            if abs(u) > n or (u + n) % 2:
                return 0.0
            return float(b[(u + n) // 2])

        return fac(x1 + x2) * fac(x1 - x2)

    @property
    def survival(self) -> np.ndarray:
        """P(tau_1 > k) for k = 0..n_max (renewal kernels only)."""
        if self.model is not ModelKind.RENEWAL_HALF:
            raise KernelError("survival is defined for renewal kernels only")
        return np.concatenate([[1.0], 1.0 - np.cumsum(self.step[1:])])

    @property
    def renewal_q(self) -> np.ndarray:
        if self.model is not ModelKind.RENEWAL_HALF:
            raise KernelError("renewal_q is defined for renewal kernels only")
        return np.array([m[0] for m in self.masses])


def build_kernel(
    model: "ModelKind | str",
    n_max: int,
    tail_tol: float = 1e-3,
    *,
    degenerate: bool = False,
    max_window: int = 1_000_000,
    max_entries: int = DEFAULT_MAX_ENTRIES,
) -> LatticeKernel:
    """Build the exact kernel table for ``model`` up to horizon ``n_max``.

    ``degenerate=True`` replaces the renewal inter-arrival law by f(1) = 1
    (a debugging law with q_n = 1 for all n).
    """
    model = ModelKind.parse(model)
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if not 0.0 < tail_tol < 1.0:
        raise ValueError("tail_tol must lie in (0, 1)")
    if degenerate and model is not ModelKind.RENEWAL_HALF:
        raise ValueError("the degenerate law applies to renewal kernels only")
    if model is ModelKind.SRW2D:
        return _build_srw2d(n_max, tail_tol, max_entries)
    if model is ModelKind.CAUCHY1D:
        return _build_cauchy(n_max, tail_tol, max_window, max_entries)
    return _build_renewal(n_max, tail_tol, degenerate)


def _build_srw2d(n_max: int, tail_tol: float, max_entries: int) -> LatticeKernel:
    entries = (n_max + 1) * (n_max + 2) // 2
    if entries > max_entries:
        raise SizingError(f"SRW2D table needs {entries} entries > budget {max_entries}")
    # Pascal rows halved at each step: every entry C(n, k) / 2^n is a dyadic
    # rational, exact in float64 while C(n, k) < 2^53 (n <= 56) and within a
    # few ulp per step beyond.
    rows = [np.ones(1)]
    for n in range(1, n_max + 1):
        prev = rows[-1]
        row = np.empty(n + 1)
        row[0] = row[n] = 0.5 * prev[0]
        row[1:n] = 0.5 * (prev[:-1] + prev[1:])
        rows.append(row)
    radius = np.arange(n_max + 1)
    return LatticeKernel(
        model=ModelKind.SRW2D,
        n_max=n_max,
        tail_tol=tail_tol,
        masses=tuple(rows),
        window_radius=radius,
        tail_mass=np.zeros(n_max + 1),
    )


def _cauchy_radius(n_max: int, tail_tol: float, max_window: int) -> int:
    # smallest W with n_max * tail(W) <= tail_tol / 2; tail(W) ~ 2 c_J / W
    target = 0.5 * tail_tol / n_max
    hi = max(1, int(4.0 * cauchy_norm_const() / target) + 2)
    if cauchy_tail(min(hi, max_window)) > target:
        return -1
    lo = 0
    while lo < hi:
        mid = (lo + hi) // 2
        if cauchy_tail(mid) <= target:
            hi = mid
        else:
            lo = mid + 1
    return lo


def _build_cauchy(n_max: int, tail_tol: float, max_window: int, max_entries: int) -> LatticeKernel:
    # One window for every n >= 1. The mass killed at the window edge over n
    # steps is about sum_k tail(W_k), which grows like log n for windows
    # scaled with k, while a fixed window keeps the total below tail_tol.
    w = _cauchy_radius(n_max, tail_tol, max_window)
    if w < 0:
        w = max_window
    radii = [0] + [w] * n_max
    radii = np.array(radii)
    entries = int(np.sum(2 * radii + 1))
    if entries > max_entries:
        raise SizingError(f"CAUCHY1D table needs {entries} entries > budget {max_entries}")
    c = cauchy_norm_const()
    p_radius = int(radii[-1] + radii[-2]) if n_max > 1 else int(radii[-1])
    xs = np.arange(-p_radius, p_radius + 1, dtype=float)
    p = c / (1.0 + xs * xs)

    masses = [np.ones(1)]
    tails = [0.0]
    prev = masses[0]
    for n in range(1, n_max + 1):
        w_prev, w = int(radii[n - 1]), int(radii[n])
        reach = w_prev + w
        kern = p[p_radius - reach : p_radius + reach + 1]
        full = signal.fftconvolve(prev, kern) if prev.size > 64 else np.convolve(prev, kern)
        # full is indexed by x + w_prev + reach
        off = w_prev + reach
        cur = np.clip(full[off - w : off + w + 1], 0.0, None)
        tail = 1.0 - math.fsum(cur)
        if tail > tail_tol:
            raise TruncationError(
                f"CAUCHY1D tail at n={n} exceeds tail_tol={tail_tol} with window {w}", tail
            )
        masses.append(cur)
        tails.append(max(tail, 0.0))
        prev = cur
    step = p
    return LatticeKernel(
        model=ModelKind.CAUCHY1D,
        n_max=n_max,
        tail_tol=tail_tol,
        masses=tuple(masses),
        window_radius=radii,
        tail_mass=np.array(tails),
        step=step,
    )


def _build_renewal(n_max: int, tail_tol: float, degenerate: bool) -> LatticeKernel:
    f = np.zeros(n_max + 1)
    if degenerate:
        f[1] = 1.0
    else:
        f[1:] = renewal_norm_const() * np.arange(1, n_max + 1, dtype=float) ** -1.5
    never_return = max(0.0, 1.0 - math.fsum(f))
    q = np.zeros(n_max + 1)
    q[0] = 1.0
    for n in range(1, n_max + 1):
        q[n] = np.dot(f[1 : n + 1], q[n - 1 :: -1])
    return LatticeKernel(
        model=ModelKind.RENEWAL_HALF,
        n_max=n_max,
        tail_tol=tail_tol,
        masses=tuple(q[n : n + 1].copy() for n in range(n_max + 1)),
        window_radius=np.zeros(n_max + 1, dtype=int),
        tail_mass=1.0 - q,
        step=f,
        never_return_mass=never_return,
        degenerate=degenerate,
    )


@dataclass(frozen=True, eq=False)
class OverlapTable:
    """Per-step overlaps r_n and prefix sums R_n; r[0] = R[0] = 0."""

    model: ModelKind
    r: np.ndarray
    R: np.ndarray

    @property
    def n_max(self) -> int:
        return len(self.r) - 1

    def R_at(self, n: int) -> float:
        if not 0 <= n <= self.n_max:
            raise RangeError(f"N={n} outside overlap table 0..{self.n_max}")
        return float(self.R[n])


def overlap_table(kernel: LatticeKernel) -> OverlapTable:
    r = np.zeros(kernel.n_max + 1)
    for n in range(1, kernel.n_max + 1):
        m = kernel.masses[n]
        if kernel.model is ModelKind.SRW2D:
            r[n] = np.dot(m, m) ** 2
        else:
            r[n] = np.dot(m, m)
    return OverlapTable(model=kernel.model, r=r, R=np.cumsum(r))


def return_probability(model: "ModelKind | str", n: int, kernel: LatticeKernel | None = None) -> float:
    """P(S_{2n} = 0) computed independently of the overlap table."""
    model = ModelKind.parse(model)
    if model is ModelKind.SRW2D:
        return float(stats.binom.pmf(n, 2 * n, 0.5) ** 2)
    if model is ModelKind.CAUCHY1D:
        if kernel is None:
            raise ValueError("CAUCHY1D return probability needs a kernel with n_max >= 2n")
        return kernel.q_at(2 * n, 0)
    raise ValueError("return probability is defined for walk models")


def beta_schedule(overlap: OverlapTable, N: int, beta_hat: float) -> float:
    """Intermediate disorder scaling beta_N = beta_hat / sqrt(R_N)."""
    R_N = overlap.R_at(N)
    if beta_hat < 0:
        raise ValueError("beta_hat must be nonnegative")
    if R_N <= 0:
        raise ValueError("R_N must be positive")
    return beta_hat / math.sqrt(R_N)


@dataclass(frozen=True)
class BlockPartition:
    M: int
    boundaries: tuple

    @property
    def N(self) -> int:
        return self.boundaries[-1]

    def interval(self, i: int) -> tuple[int, int]:
        """Block I_i = (t_{i-1}, t_i] returned as the half-open range [lo, hi)."""
        if not 1 <= i <= self.M:
            raise IndexError(f"block index {i} outside 1..{self.M}")
        return self.boundaries[i - 1] + 1, self.boundaries[i] + 1


def block_boundaries(overlap: OverlapTable, N: int, M: int) -> BlockPartition:
    if not 1 <= M <= N:
        raise ValueError("need 1 <= M <= N")
    R = overlap.R[: N + 1]
    support = int(np.count_nonzero(overlap.r[1 : N + 1] > 0))
    if M > support:
        raise ValueError(f"infeasible partition: M={M} exceeds {support} steps with r_n > 0")
    R_N = R[N]
    t = [0]
    for i in range(1, M + 1):
        level = R_N if i == M else (i / M) * R_N
        t.append(int(np.searchsorted(R[1:], level, side="left")) + 1)
    return BlockPartition(M=M, boundaries=tuple(t))


def _point(X, d: int):
    if d == 0:
        t = X if np.isscalar(X) else X[-1]
        return (), int(t)
    x, t = X
    return tuple(int(c) for c in np.atleast_1d(x)), int(t)


def triple_norm_zeta(overlap: OverlapTable, N: int, X, Xp) -> tuple[int, float]:
    """Return (|||X - X'|||, zeta) with zeta = R_{|||X - X'|||} / R_N in [0, 1].

    Points are ``(x, t)`` with ``x`` a length-d tuple, or a bare ``t`` for
    d = 0. With L = 1 the inverse scale is phi^{<-}(|x|) = |x|^d exactly.
    """
    d = overlap.model.dim
    x, t = _point(X, d)
    xp, tp = _point(Xp, d)
    dt = abs(t - tp)
    if d == 0:
        norm = dt
    else:
        dist_d = sum((a - b) ** 2 for a, b in zip(x, xp)) if d == 2 else abs(x[0] - xp[0])
        norm = max(dt, dist_d)
    if norm == 0:
        return 0, 0.0
    if norm > overlap.n_max:
        raise RangeError(f"|||X-X'|||={norm} exceeds table horizon {overlap.n_max}")
    zeta = overlap.R_at(norm) / overlap.R_at(N)
    return norm, float(min(max(zeta, 0.0), 1.0))


def _gauss2(y2: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * y2) / (2.0 * math.pi)


def llt_diagnostic(kernel: LatticeKernel, n: int) -> float:
    """Sup-distance between the rescaled kernel and its local-limit density.

    SRW2D uses the parity sublattice with density 2g and scale L^2 = 1/2
    (each coordinate step has variance 1/2); CAUCHY1D uses L = 1; renewal
    kernels report |sqrt(n) q_n - c| with c read off the table tail.
    """
    kernel._check(n)
    if n < 1:
        raise RangeError("n must be >= 1")
    if kernel.model is ModelKind.SRW2D:
        q = kernel.q(n)
        x = np.arange(-n, n + 1)
        x1, x2 = np.meshgrid(x, x, indexing="ij")
        sub = (x1 + x2 - n) % 2 == 0
        s = n / 2.0
        dens = 2.0 * _gauss2((x1**2 + x2**2) / s)
        return float(np.max(np.abs(s * q - dens)[sub]))
    if kernel.model is ModelKind.CAUCHY1D:
        w = int(kernel.window_radius[n])
        x = np.arange(-w, w + 1, dtype=float)
        g = 1.0 / (math.pi * (1.0 + (x / n) ** 2))
        return float(np.max(np.abs(n * kernel.masses[n] - g)))
    q = kernel.renewal_q
    m = np.arange(max(1, int(0.9 * kernel.n_max)), kernel.n_max + 1)
    c_hat = float(np.mean(np.sqrt(m) * q[m]))
    return abs(math.sqrt(n) * q[n] - c_hat)


# Binary cache layout (all little-endian):
#   magic  b"MRGK1"
#   header <B model code> <B degenerate> <q n_max> <d tail_tol>
#          <d never_return_mass> <q len(step)>
#   n_max + 1 records of <q window radius> <d tail_mass> <q count>
#   float64 payload: masses for n = 0..n_max concatenated
#   float64 aux: the step array
_MAGIC = b"MRGK1"
_HEADER = struct.Struct("<BBqddq")
_RECORD = struct.Struct("<qdq")
_CODES = {ModelKind.SRW2D: 0, ModelKind.CAUCHY1D: 1, ModelKind.RENEWAL_HALF: 2}


class CacheFormatError(KernelError):
    pass


def save_kernel(kernel: LatticeKernel, path: "str | os.PathLike") -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(
            _HEADER.pack(
                _CODES[kernel.model],
                int(kernel.degenerate),
                kernel.n_max,
                kernel.tail_tol,
                kernel.never_return_mass,
                len(kernel.step),
            )
        )
        for n in range(kernel.n_max + 1):
            fh.write(
                _RECORD.pack(int(kernel.window_radius[n]), float(kernel.tail_mass[n]), len(kernel.masses[n]))
            )
        for m in kernel.masses:
            fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(kernel.step, dtype="<f8").tobytes())


def load_kernel(path: "str | os.PathLike") -> LatticeKernel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(_MAGIC)] != _MAGIC:
        raise CacheFormatError(f"{path}: bad magic")
    pos = len(_MAGIC)
    try:
        code, degen, n_max, tol, never, n_step = _HEADER.unpack_from(data, pos)
        pos += _HEADER.size
        model = {v: k for k, v in _CODES.items()}[code]
        radii, tails, counts = [], [], []
        for _ in range(n_max + 1):
            r, t, c = _RECORD.unpack_from(data, pos)
            pos += _RECORD.size
            radii.append(r)
            tails.append(t)
            counts.append(c)
        total = sum(counts)
        payload = np.frombuffer(data, dtype="<f8", count=total, offset=pos).astype(np.float64)
        pos += 8 * total
        step = np.frombuffer(data, dtype="<f8", count=n_step, offset=pos).astype(np.float64)
        pos += 8 * n_step
    except (struct.error, KeyError, ValueError) as exc:
        raise CacheFormatError(f"{path}: truncated or corrupt ({exc})") from None
    if pos != len(data):
        raise CacheFormatError(f"{path}: {len(data) - pos} trailing bytes")
    masses = tuple(np.split(payload, np.cumsum(counts)[:-1]))
    return LatticeKernel(
        model=model,
        n_max=n_max,
        tail_tol=tol,
        masses=masses,
        window_radius=np.array(radii),
        tail_mass=np.array(tails),
        step=step,
        never_return_mass=never,
        degenerate=bool(degen),
    )


def cached_kernel(
    model: "ModelKind | str",
    n_max: int,
    tail_tol: float = 1e-3,
    cache_dir: "str | os.PathLike | None" = None,
    **kwargs,
) -> LatticeKernel:
    """Build a kernel, reusing a cache file keyed by (model, n_max, tail_tol)."""
    if cache_dir is None:
        return build_kernel(model, n_max, tail_tol, **kwargs)
    model = ModelKind.parse(model)
    tag = "_degen" if kwargs.get("degenerate") else ""
    name = f"{model.value}_{n_max}_{tail_tol!r}{tag}.mrgk"
    path = os.path.join(cache_dir, name)
    if os.path.exists(path):
        return load_kernel(path)
    kernel = build_kernel(model, n_max, tail_tol, **kwargs)
    os.makedirs(cache_dir, exist_ok=True)
    tmp = path + f".{os.getpid()}.tmp"
    save_kernel(kernel, tmp)
    os.replace(tmp, path)
    return kernel
