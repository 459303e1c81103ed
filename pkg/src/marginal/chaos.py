"""Polynomial chaos terms, overlap-chain sums, block variables Theta and the
index-sequence combinatorics (sharp and dominated sequences).

With xi = 1 + beta eta the partition function expands as
Z = 1 + sum_k beta^k sum_{chains} prod q eta, and with beta = beta_hat / sqrt(R_N)
the order-k term is beta_hat^k Z^(k), Z^(k) = R_N^{-k/2} sum_{chains} prod q eta.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterator, Sequence

import numpy as np
from scipy import fft as sfft
from scipy import signal

from .disorder import DisorderField, DisorderLaw, EtaParams, batch_eta
from .kernels import (
    BlockPartition,
    LatticeKernel,
    ModelKind,
    OverlapTable,
    RangeError,
    cauchy_norm_const,
    cauchy_tail,
)

__all__ = [
    "ChaosOrderError",
    "is_sharp",
    "is_dominated",
    "dominated_decomposition",
    "sharp_sequences",
    "count_sharp",
    "chaos_sums_batch",
    "chaos_term_k",
    "truncated_Z",
    "overlap_chain_sums",
    "second_moment_by_order",
    "chaos_tail_l2",
    "theta_block",
    "theta_block_batch",
    "theta_variance",
    "K_MAX_DEFAULT",
]

K_MAX_DEFAULT = 4


class ChaosOrderError(ValueError):
    pass


def is_sharp(i: Sequence[int]) -> bool:
    """All pairwise gaps |i_j - i_j'| >= 2."""
    s = sorted(i)
    return all(b - a >= 2 for a, b in zip(s, s[1:]))


def is_dominated(i: Sequence[int]) -> bool:
    """First entry strictly exceeds all the others."""
    return len(i) > 0 and all(i[0] > v for v in i[1:])


def dominated_decomposition(i: Sequence[int]) -> list[tuple[int, ...]]:
    """Split i at its strict running maxima into consecutive dominated pieces."""
    pieces: list[list[int]] = []
    top = None
    for v in i:
        if top is None or v > top:
            pieces.append([v])
            top = v
        else:
            pieces[-1].append(v)
    return [tuple(p) for p in pieces]


def sharp_sequences(M: int, k: int) -> Iterator[tuple[int, ...]]:
    """All ordered k-sequences over {1..M} with pairwise gaps >= 2."""
    for subset in itertools.combinations(range(1, M + 1), k):
        if all(b - a >= 2 for a, b in zip(subset, subset[1:])):
            yield from itertools.permutations(subset)


def count_sharp(M: int, k: int) -> int:
    """k! * C(M - k + 1, k): gap-2 subsets times orderings."""
    if k == 0:
        return 1
    return math.factorial(k) * math.comb(M - k + 1, k) if M - k + 1 >= k else 0


# ---------------------------------------------------------------------------
# chaos terms


def _causal_conv(q: np.ndarray, A: np.ndarray, N: int) -> np.ndarray:
    """out[:, n] = sum_{m < n} q[n - m] A[:, m] for n = 0..N (q[0] ignored)."""
    qq = q[: N + 1].copy()
    qq[0] = 0.0
    nf = sfft.next_fast_len(2 * (N + 1))
    out = sfft.irfft(sfft.rfft(A, nf, axis=-1) * sfft.rfft(qq, nf), nf, axis=-1)
    return out[..., : N + 1]


def _renewal_chaos(kernel, eta_rows: np.ndarray, N: int, K: int) -> np.ndarray:
    # eta_rows: (B, N + 1), column 0 unused
    B = eta_rows.shape[0]
    q = kernel.renewal_q
    sums = np.zeros((B, K + 1))
    sums[:, 0] = 1.0
    A = np.zeros((B, N + 1))
    A[:, 0] = 1.0  # the start acts as order 0
    for k in range(1, K + 1):
        A = eta_rows * _causal_conv(q, A, N)
        A[:, 0] = 0.0
        sums[:, k] = A[:, 1:].sum(axis=1)
    return sums


def _spread_srw(V: np.ndarray) -> np.ndarray:
    # one step of the rotated +-1 x +-1 walk on a fixed square (mass stays inside)
    out = np.zeros_like(V)
    out[..., 1:, 1:] += V[..., :-1, :-1]
    out[..., 1:, :-1] += V[..., :-1, 1:]
    out[..., :-1, 1:] += V[..., 1:, :-1]
    out[..., :-1, :-1] += V[..., 1:, 1:]
    return 0.25 * out


def _srw_chaos(seed, r, law, params, N, K) -> np.ndarray:
    B = len(r)
    h = N
    u = np.arange(-h, h + 1)
    uu, vv = np.meshgrid(u, u, indexing="ij")
    ok = (uu + vv) % 2 == 0
    x1, x2 = (uu + vv) // 2, (uu - vv) // 2
    V = np.zeros((K + 1, B, 2 * h + 1, 2 * h + 1))
    V[0, :, h, h] = 1.0
    for n in range(1, N + 1):
        eta = batch_eta(seed, r[:, None, None], law, params, n, [x1[None], x2[None]])
        eta = np.where(ok[None], eta, 0.0)
        S = _spread_srw(V)
        V = S.copy()
        V[1:] += eta[None] * S[:-1]
    return V.sum(axis=(2, 3)).T


def _cauchy_chaos(seed, r, law, params, N, K, W) -> np.ndarray:
    # same window convention as the partition sweep: mass leaving [-W, W]
    # keeps its order and continues with weight 1
    B = len(r)
    c = cauchy_norm_const()
    z = np.arange(-2 * W, 2 * W + 1, dtype=float)
    p = c / (1.0 + z * z)
    xs = np.arange(-W, W + 1)
    exit_mass = 0.5 * (cauchy_tail(W - xs) + cauchy_tail(W + xs))
    L = 2 * W + 1
    V = np.zeros((K + 1, B, L))
    V[0, :, W] = 1.0
    absorbed = np.zeros((K + 1, B))
    for n in range(1, N + 1):
        absorbed += V @ exit_mass
        S = signal.fftconvolve(V, p[None, None, :], axes=-1)[..., 2 * W : 2 * W + L]
        eta = batch_eta(seed, r[:, None], law, params, n, [xs[None]])
        V = S.copy()
        V[1:] += eta[None] * S[:-1]
    return (V.sum(axis=-1) + absorbed).T


def chaos_sums_batch(
    kernel: LatticeKernel,
    seed: int,
    realizations,
    law: DisorderLaw,
    params: EtaParams,
    N: int,
    K: int,
    window: int | None = None,
) -> np.ndarray:
    """Unnormalised chain sums S_k = sum_{chains of k pickups} prod q eta.

    Returns shape (B, K + 1) with S_0 = 1, so Z = sum_k beta^k S_k when
    K covers every order.
    """
    r = np.atleast_1d(np.asarray(realizations, dtype=np.int64))
    if K < 0:
        raise ChaosOrderError("K must be >= 0")
    if kernel.model is ModelKind.RENEWAL_HALF:
        if N > kernel.n_max:
            raise RangeError(f"N={N} beyond kernel horizon {kernel.n_max}")
        eta = np.zeros((len(r), N + 1))
        eta[:, 1:] = batch_eta(seed, r[:, None], law, params, np.arange(1, N + 1)[None, :])
        return _renewal_chaos(kernel, eta, N, K)
    if kernel.model is ModelKind.SRW2D:
        return _srw_chaos(seed, r, law, params, N, K)
    W = int(kernel.window_radius[min(N, kernel.n_max)]) if window is None else int(window)
    return _cauchy_chaos(seed, r, law, params, N, K, W)


def chaos_term_k(
    kernel: LatticeKernel,
    field: DisorderField,
    eta: EtaParams,
    N: int,
    k: int,
    overlap: OverlapTable,
    K_max: int = K_MAX_DEFAULT,
    window: int | None = None,
) -> float:
    """Z^(k) = R_N^{-k/2} sum_{chains} prod q eta for one realization."""
    if not 1 <= k <= K_max:
        raise ChaosOrderError(f"order k={k} outside 1..{K_max}")
    sums = chaos_sums_batch(kernel, field.seed, [field.realization_index], field.law, eta, N, k, window)
    return float(sums[0, k] * overlap.R_at(N) ** (-0.5 * k))


def truncated_Z(
    kernel: LatticeKernel,
    field: DisorderField,
    eta: EtaParams,
    N: int,
    beta_hat: float,
    K: int,
    overlap: OverlapTable,
    window: int | None = None,
) -> float:
    """1 + sum_{k<=K} beta_hat^k Z^(k)."""
    if K == 0 or beta_hat == 0.0:
        return 1.0
    sums = chaos_sums_batch(kernel, field.seed, [field.realization_index], field.law, eta, N, K, window)
    scale = beta_hat / math.sqrt(overlap.R_at(N))
    return float(1.0 + sum(scale**k * sums[0, k] for k in range(1, K + 1)))


# ---------------------------------------------------------------------------
# deterministic chain sums


def overlap_chain_sums(overlap: OverlapTable, N: int, K: int) -> np.ndarray:
    """U_k(N) = sum_{0 < n_1 < ... < n_k <= N} r_{n_1} r_{n_2 - n_1} ... r_{n_k - n_{k-1}}.

    Computed from FFT convolution powers of r; U_0 = 1.
    """
    if not 0 <= N <= overlap.n_max:
        raise RangeError(f"N={N} outside overlap table 0..{overlap.n_max}")
    r = overlap.r[: N + 1].copy()
    r[0] = 0.0
    U = np.zeros(K + 1)
    U[0] = 1.0
    power = np.zeros(N + 1)
    power[0] = 1.0
    for k in range(1, K + 1):
        power = signal.fftconvolve(power, r)[: N + 1]
        power[: k] = 0.0  # a k-chain ends at n >= k; clears round-off
        U[k] = math.fsum(power)
    return U


def second_moment_by_order(overlap: OverlapTable, eta, N: int, tol: float = 1e-12, k_cap: int = 400):
    """E[Z^2] assembled order by order as 1 + sum_k gamma^k U_k(N).

    Orders are added until the geometric bound on the remaining tail,
    based on U_{k+1} <= R_N U_k, drops below ``tol``. Returns
    (value, terms, tail_bound).
    """
    g = eta.gamma if isinstance(eta, EtaParams) else float(eta)
    rho = g * overlap.R_at(N)
    if rho >= 1.0:
        raise ArithmeticError("order-by-order sum needs gamma R_N < 1")
    K = 8
    while True:
        U = overlap_chain_sums(overlap, N, K)
        terms = g ** np.arange(K + 1) * U
        tail = terms[-1] * rho / (1.0 - rho)
        if tail < tol or K >= k_cap:
            return math.fsum(terms), terms, tail
        K *= 2


def chaos_tail_l2(overlap: OverlapTable, eta, N: int, K: int) -> float:
    """E[(Z - Z^{<=K})^2] = sum_{k>K} gamma^k U_k(N)."""
    total, terms, tail = second_moment_by_order(overlap, eta, N)
    if K + 1 >= len(terms):
        return tail
    return math.fsum(terms[K + 1 :]) + tail


# ---------------------------------------------------------------------------
# block variables


def theta_variance(overlap: OverlapTable, N: int, blocks: BlockPartition, i: Sequence[int], var_eta: float = 1.0) -> float:
    """Exact E[Theta_i^2] = (M var_eta / R_N)^{|i|} prod_j (R_{t_{i_j}} - R_{t_{i_j - 1}})."""
    M = blocks.M
    R_N = overlap.R_at(N)
    out = 1.0
    for b in i:
        lo, hi = blocks.boundaries[b - 1], blocks.boundaries[b]
        out *= M * var_eta * (overlap.R[hi] - overlap.R[lo]) / R_N
    return out


def _check_index(blocks: BlockPartition, i: Sequence[int]) -> None:
    if len(i) not in (1, 2):
        raise ChaosOrderError("Theta is implemented for |i| in {1, 2}")
    for b in i:
        if not 1 <= b <= blocks.M:
            raise IndexError(f"block index {b} outside 1..{blocks.M}")


def theta_block_batch(
    kernel: LatticeKernel,
    seed: int,
    realizations,
    law: DisorderLaw,
    params: EtaParams,
    overlap: OverlapTable,
    N: int,
    blocks: BlockPartition,
    i: Sequence[int],
    start=None,
) -> np.ndarray:
    """Theta_i for a block of realizations of a renewal kernel.

    Theta_i = (M / R_N)^{|i|/2} sum_{n_1 - t_0 in I_{i_1}, n_2 - n_1 in I_{i_2}}
    q_{n_1 - t_0} eta_{n_1} q_{n_2 - n_1} eta_{n_2}; ``start`` is t_0.
    """
    _check_index(blocks, i)
    if kernel.model is not ModelKind.RENEWAL_HALF:
        raise ValueError("batched Theta is implemented for renewal kernels; use theta_block")
    r = np.atleast_1d(np.asarray(realizations, dtype=np.int64))
    t0 = 0 if start is None else int(start if np.isscalar(start) else start[-1])
    q = kernel.renewal_q
    lo1, hi1 = blocks.interval(i[0])
    if hi1 - 1 > kernel.n_max:
        raise RangeError("block beyond kernel horizon")
    norm = (blocks.M / overlap.R_at(N)) ** (len(i) / 2.0)
    n1 = np.arange(lo1, hi1)
    eta1 = batch_eta(seed, r[:, None], law, params, (t0 + n1)[None, :])
    a1 = eta1 * q[n1]
    if len(i) == 1:
        return norm * a1.sum(axis=1)
    lo2, hi2 = blocks.interval(i[1])
    m = np.arange(lo2, hi2)
    # eta at times t0 + n1 + m for n1 in I_{i1}, m in I_{i2}
    span = np.arange(t0 + lo1 + lo2, t0 + (hi1 - 1) + (hi2 - 1) + 1)
    eta2 = batch_eta(seed, r[:, None], law, params, span[None, :])
    # inner(n1) = sum_m q_m eta(t0 + n1 + m): a correlation of eta2 with q_m
    qm = q[m]
    nf = sfft.next_fast_len(eta2.shape[1] + len(qm))
    corr = sfft.irfft(sfft.rfft(eta2, nf, axis=1) * np.conj(sfft.rfft(qm, nf)), nf, axis=1)
    inner = corr[:, : len(n1)]
    return norm * np.einsum("bn,bn->b", a1, inner)


def theta_block(
    kernel: LatticeKernel,
    field: DisorderField,
    eta: EtaParams,
    overlap: OverlapTable,
    N: int,
    blocks: BlockPartition,
    i: Sequence[int],
    start=None,
) -> float:
    """Theta_i for one realization; any model, optional start point (x0, t0)."""
    _check_index(blocks, i)
    if kernel.model is ModelKind.RENEWAL_HALF:
        out = theta_block_batch(
            kernel, field.seed, [field.realization_index], field.law, eta, overlap, N, blocks, i, start
        )
        return float(out[0])
    d = kernel.dim
    if start is None:
        x0, t0 = np.zeros(d, dtype=np.int64), 0
    else:
        x0, t0 = np.atleast_1d(np.asarray(start[0], dtype=np.int64)), int(start[1])
    norm = (blocks.M / overlap.R_at(N)) ** (len(i) / 2.0)

    def site_eta(n, offsets_shape_radius):
        rad = offsets_shape_radius
        ax = np.arange(-rad, rad + 1)
        if d == 1:
            return field.eta(eta, n, [x0[0] + ax])
        g1, g2 = np.meshgrid(ax, ax, indexing="ij")
        return field.eta(eta, n, [x0[0] + g1, x0[1] + g2])

    lo1, hi1 = blocks.interval(i[0])
    total = 0.0
    first = []
    for n1 in range(lo1, hi1):
        qa = kernel.q(n1)
        rad = qa.shape[0] // 2
        a = qa * site_eta(t0 + n1, rad)
        first.append((n1, rad, a))
    if len(i) == 1:
        return norm * float(sum(a.sum() for _, _, a in first))
    lo2, hi2 = blocks.interval(i[1])
    for n1, rad1, a in first:
        for m in range(lo2, hi2):
            qm = kernel.q(m)
            spread = signal.fftconvolve(a, qm)  # supported on radius rad1 + rad_m
            rad = spread.shape[0] // 2
            total += float(np.sum(spread * site_eta(t0 + n1 + m, rad)))
    return norm * total
