"""Sample statistics with batch-mean standard errors."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from ..limits import LimitLaw

__all__ = [
    "NonPositiveError",
    "SampleSummary",
    "batch_means",
    "batch_se",
    "summarize",
    "ks_lognormal",
    "covariance_of_logs",
    "fractional_moment",
    "strong_disorder_scan",
    "sample_kurtosis",
    "pairwise_correlations",
    "strictly_decreasing",
    "paired_bootstrap",
    "decreasing_within_noise",
]


class NonPositiveError(ValueError):
    def __init__(self, count: int):
        super().__init__(f"{count} nonpositive samples")
        self.count = count


def batch_means(x: np.ndarray, batches: int = 30) -> np.ndarray:
    """Means of ``batches`` consecutive equal blocks (the remainder is dropped)."""
    x = np.asarray(x, dtype=float)
    if batches < 1 or len(x) < batches:
        raise ValueError("need at least one sample per batch")
    size = len(x) // batches
    return x[: size * batches].reshape(batches, size).mean(axis=1)


def batch_se(x: np.ndarray, batches: int = 30) -> float:
    m = batch_means(x, batches)
    return float(m.std(ddof=1) / math.sqrt(len(m)))


def _var_se(x: np.ndarray, batches: int) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    dev = (x - x.mean()) ** 2
    return float(x.var(ddof=1)), batch_se(dev, batches)


def sample_kurtosis(x: np.ndarray) -> float:
    """Non-excess kurtosis E[(x - m)^4] / Var^2 (3 for a Gaussian)."""
    return float(stats.kurtosis(x, fisher=False, bias=True))


def pairwise_correlations(cols: np.ndarray) -> np.ndarray:
    c = np.corrcoef(np.asarray(cols, dtype=float), rowvar=False)
    iu = np.triu_indices(c.shape[0], 1)
    return c[iu]


def fractional_moment(x: np.ndarray, theta: float, batches: int = 30) -> tuple[float, float]:
    v = np.power(np.clip(np.asarray(x, dtype=float), 0.0, None), theta)
    return float(v.mean()), batch_se(v, batches)


def ks_lognormal(samples, law: LimitLaw, allow_nonpositive: bool = False) -> float:
    """KS distance between log(samples) and Normal(-sigma^2/2, sigma^2).

    With ``allow_nonpositive`` the comparison runs on the original scale
    against the log-normal CDF (which is 0 on (-inf, 0]); the distance is
    the same for positive samples.
    """
    x = np.asarray(samples, dtype=float)
    if len(x) < 100:
        raise ValueError("KS distance needs at least 100 samples")
    if np.isnan(x).any():
        raise ValueError("KS distance got NaN samples")
    bad = int(np.count_nonzero(~(x > 0)))
    s2 = law.sigma_sq
    if bad and not allow_nonpositive:
        raise NonPositiveError(bad)
    if s2 == 0.0:
        # point mass at 1
        return float(max(np.mean(x < 1.0), np.mean(x > 1.0)))
    s = math.sqrt(s2)
    if allow_nonpositive:
        cdf = lambda z: np.where(z > 0, stats.norm.cdf((np.log(np.where(z > 0, z, 1.0)) + 0.5 * s2) / s), 0.0)
        return float(stats.kstest(x, cdf).statistic)
    return float(stats.kstest(np.log(x), "norm", args=(-0.5 * s2, s)).statistic)


@dataclass
class SampleSummary:
    model: str
    N: int
    beta_hat: float
    n: int
    mean: float
    mean_se: float
    var: float
    var_se: float
    log_mean: float
    log_mean_se: float
    log_var: float
    log_var_se: float
    kurtosis: float
    frac_moment: float
    frac_moment_se: float
    ks: float
    nonpositive: int

    def row(self) -> dict:
        return asdict(self)


def summarize(samples, model: str, N: int, beta_hat: float, theta: float = 0.5, batches: int = 30) -> SampleSummary:
    x = np.asarray(samples, dtype=float)
    pos = x > 0
    bad = int(np.count_nonzero(~pos))
    logs = np.log(x[pos])
    var, var_se = _var_se(x, batches)
    if len(logs) >= batches:
        lvar, lvar_se = _var_se(logs, batches)
        lmean, lmean_se = float(logs.mean()), batch_se(logs, batches)
    else:
        lvar = lvar_se = lmean = lmean_se = float("nan")
    fm, fm_se = fractional_moment(x, theta, batches)
    ks = float("nan")
    if beta_hat < 1.0 and len(x) >= 100:
        ks = ks_lognormal(x, LimitLaw(beta_hat), allow_nonpositive=True)
    kurt = sample_kurtosis(x) if var > 0 else float("nan")
    return SampleSummary(
        model, N, beta_hat, len(x), float(x.mean()), batch_se(x, batches), var, var_se,
        lmean, lmean_se, lvar, lvar_se, kurt, fm, fm_se, ks, bad,
    )


def covariance_of_logs(samples, batches: int = 30):
    """Empirical covariance of log Z(X_i) with batch-mean standard errors.

    ``samples`` has shape (S, P): S joint realizations of P points. Rows with
    a nonpositive entry are dropped and counted. Returns (cov, se, dropped).
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise ValueError("samples must have shape (S, P)")
    ok = np.all(x > 0, axis=1)
    dropped = int(np.count_nonzero(~ok))
    L = np.log(x[ok])
    C = np.cov(L, rowvar=False, ddof=1).reshape(L.shape[1], L.shape[1])
    dev = L - L.mean(axis=0)
    P = L.shape[1]
    se = np.zeros((P, P))
    for a in range(P):
        for b in range(a, P):
            se[a, b] = se[b, a] = batch_se(dev[:, a] * dev[:, b], batches)
    return C, se, dropped


def strictly_decreasing(values) -> bool:
    v = list(values)
    return all(b < a for a, b in zip(v, v[1:]))


def paired_bootstrap(stat, columns, reps: int = 200, seed: int = 0) -> np.ndarray:
    """stat(column) on ``reps`` resamples drawn with the same row indices for every column.

    Columns must share their rows (common realizations), so differences of
    the returned statistics keep the pairing. Returns shape (reps, len(columns)).
    """
    cols = [np.asarray(c) for c in columns]
    n = len(cols[0])
    if any(len(c) != n for c in cols):
        raise ValueError("paired columns need equal lengths")
    rng = np.random.default_rng(seed)
    out = np.empty((reps, len(cols)))
    for b in range(reps):
        idx = rng.integers(0, n, n)
        out[b] = [stat(c[idx]) for c in cols]
    return out


def decreasing_within_noise(values, diff_se, slack: float = 2.0) -> tuple[bool, bool]:
    """(ok, strict) for a gap sequence along a refinement grid.

    ``ok`` fails only when some step increases the gap by more than
    ``slack`` times the standard error of that step; ``strict`` reports
    plain strict decrease.
    """
    v = list(values)
    se = list(diff_se)
    if len(se) != len(v) - 1:
        raise ValueError("need one difference SE per step")
    ok = all(b - a <= slack * e for a, b, e in zip(v, v[1:], se))
    return ok, strictly_decreasing(v)


def strong_disorder_scan(table: dict, theta: float = 0.5, batches: int = 30, slack: float = 2.0):
    """Fractional moments over a (N, beta_hat) grid of common-random-number samples.

    ``table[(N, beta_hat)]`` holds Z samples; samples sharing N must come
    from the same realizations. Returns (rows, violations): rows of
    (N, beta_hat, estimate, se) and a list of (N, beta_hat_a, beta_hat_b)
    where the estimate rises by more than ``slack`` batch-SE of the
    paired difference.
    """
    rows = []
    by_N: dict = {}
    for (N, bh), z in sorted(table.items()):
        est, se = fractional_moment(z, theta, batches)
        rows.append((N, bh, est, se))
        by_N.setdefault(N, []).append((bh, np.power(np.clip(z, 0.0, None), theta)))
    violations = []
    for N, cells in by_N.items():
        cells.sort(key=lambda c: c[0])
        for (ba, va), (bb, vb) in zip(cells, cells[1:]):
            diff = vb - va
            if diff.mean() > slack * batch_se(diff, batches):
                violations.append((N, ba, bb))
    return rows, violations
