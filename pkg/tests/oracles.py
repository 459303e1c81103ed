"""Exhaustive enumeration oracles, independent of the DP code paths.

Everything here walks paths or subsets one by one in plain Python and
reads disorder only through ``field_value``.
"""

from __future__ import annotations

import itertools
import math

from marginal.disorder import field_value
from marginal.kernels import cauchy_norm_const

SRW_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def _xi(field, params, n, x=()):
    if params.direct:
        # direct mode injects standard Gaussian eta whatever the field law
        gauss = type(field)(field.seed, field.realization_index)
        return 1.0 + params.beta * field_value(gauss, n, x)
    return math.exp(params.beta * field_value(field, n, x) - params.lambda_beta)


def srw2d_Z(field, params, N, x0=(0, 0), t0=0):
    total = 0.0
    for path in itertools.product(SRW_STEPS, repeat=N - t0):
        x, w = list(x0), 1.0
        for i, (a, b) in enumerate(path):
            x = [x[0] + a, x[1] + b]
            w *= _xi(field, params, t0 + i + 1, tuple(x))
        total += w
    return total / 4 ** (N - t0)


def pinning_Z(kernel, field, params, N, t0=0):
    f, S = kernel.step, kernel.survival
    sites = range(t0 + 1, N + 1)
    total = 0.0
    for r in range(N - t0 + 1):
        for A in itertools.combinations(sites, r):
            w, prev = 1.0, t0
            for a in A:
                w *= f[a - prev] * _xi(field, params, a)
                prev = a
            total += w * S[N - prev]
    return total


def cauchy_Z(field, params, N, W, x0=0, t0=0):
    """Windowed Cauchy walk: a jump leaving [-W, W] ends the disorder with weight 1."""
    c = cauchy_norm_const()
    p = lambda z: c / (1.0 + z * z)
    sites = list(range(-W, W + 1))
    total = 0.0
    for seq in itertools.product(sites + [None], repeat=N - t0):
        if None in seq and any(v is not None for v in seq[seq.index(None):]):
            continue
        x, w = x0, 1.0
        for i, y in enumerate(seq):
            if y is None:
                w *= 1.0 - sum(p(yy - x) for yy in sites)
                break
            w *= p(y - x) * _xi(field, params, t0 + i + 1, (y,))
            x = y
        total += w
    return total


def chaos_k_renewal(kernel, field, params, N, k):
    """sum over n_1 < ... < n_k of q_{n_1} q_{n_2 - n_1} ... eta_{n_1} ... eta_{n_k}."""
    q = kernel.renewal_q
    total = 0.0
    for ns in itertools.combinations(range(1, N + 1), k):
        w, prev = 1.0, 0
        for n in ns:
            w *= q[n - prev] * float(field.eta(params, n))
            prev = n
        total += w
    return total


def chaos_k_srw2d(kernel, field, params, N, k):
    """Unnormalized order-k chaos sum for SRW2D by enumerating times and sites."""
    total = 0.0
    for ns in itertools.combinations(range(1, N + 1), k):
        ranges = [range(-n, n + 1) for n in ns]
        for xs in itertools.product(*[itertools.product(r, r) for r in ranges]):
            w, pn, px = 1.0, 0, (0, 0)
            for n, x in zip(ns, xs):
                w *= kernel.q_at(n - pn, (x[0] - px[0], x[1] - px[1]))
                if w == 0.0:
                    break
                w *= float(field.eta(params, n, x))
                pn, px = n, x
            total += w
    return total


def chains_second_moment(r, gamma, N):
    """1 + sum over nonempty ordered chains 0 < n_1 < ... < n_k <= N of prod gamma r_{gaps}."""
    total = 1.0
    for k in range(1, N + 1):
        for ns in itertools.combinations(range(1, N + 1), k):
            w, prev = 1.0, 0
            for n in ns:
                w *= gamma * r[n - prev]
                prev = n
            total += w
    return total
