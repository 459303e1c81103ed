"""Experiment cells and the run driver.

Each experiment kind expands the config into cells; a cell produces a list
of flat rows written to its own CSV. Realizations are processed in fixed
index blocks and reassembled in index order, so results do not depend on
the number of worker threads.
"""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np
import scipy

from .. import __version__
from ..chaos import theta_block, theta_block_batch, theta_variance
from ..disorder import RNG_SCHEME, DisorderField, EtaParams
from ..kernels import (
    KernelError,
    LatticeKernel,
    ModelKind,
    OverlapTable,
    SizingError,
    block_boundaries,
    build_kernel,
    llt_diagnostic,
    overlap_table,
    triple_norm_zeta,
)
from ..limits import CovKernel, LimitLaw, cov_limit, sigma_psi_quadrature
from ..partition import (
    DEFAULT_CELL_BUDGET,
    BudgetError,
    FieldWeight,
    cross_moment_exact,
    field_functional_J,
    field_variance_exact,
    partition_batch,
    pinning_batch,
    second_moment_exact,
    srw2d_class,
)
from ..she import Mollifier, SheRun, she_grid_solve
from .config import ConfigError, ExperimentConfig
from .stats import (
    batch_se,
    covariance_of_logs,
    pairwise_correlations,
    sample_kurtosis,
    strong_disorder_scan,
    summarize,
)

__all__ = [
    "KINDS",
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_CELL_FAILURE",
    "EXIT_BUDGET",
    "eta_params_for",
    "get_kernel",
    "map_realizations",
    "start_samples",
    "psi_weight",
    "zeta_layout",
    "run_experiment",
    "write_csv",
    "read_csv",
]

KINDS = ("kernel", "single", "multipoint", "field", "theta", "she", "strong")
EXIT_OK, EXIT_CONFIG, EXIT_CELL_FAILURE, EXIT_BUDGET = 0, 2, 3, 4
BATCH = 250

_KERNELS: dict = {}


def get_kernel(model: ModelKind, n_max: int, tail_tol: float = 1e-2) -> tuple[LatticeKernel, OverlapTable]:
    """Kernel and overlap table, reused across cells (tables are read-only)."""
    key = (model, n_max, tail_tol if model is ModelKind.CAUCHY1D else None)
    if key not in _KERNELS:
        k = build_kernel(model, n_max, tail_tol)
        _KERNELS[key] = (k, overlap_table(k))
    return _KERNELS[key]


def eta_params_for(cfg: ExperimentConfig, beta: float) -> EtaParams:
    if cfg.direct_eta:
        return EtaParams.direct_mode(beta)
    return EtaParams.from_law(cfg.disorder_law, beta)


def map_realizations(fn: Callable, samples: int, threads: int = 1, batch: int = BATCH) -> list:
    """fn(indices) over fixed consecutive index blocks, results in block order."""
    blocks = [np.arange(s, min(s + batch, samples), dtype=np.int64) for s in range(0, samples, batch)]
    if threads <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, blocks))


def start_samples(
    kernel: LatticeKernel,
    seed: int,
    law,
    params: EtaParams,
    N: int,
    starts: list,
    samples: int,
    threads: int = 1,
    first: int = 0,
) -> np.ndarray:
    """Z at each start point for realizations first..first+samples-1, shape (S, P).

    Starts are times t for renewals and (x, t) pairs for walks.
    """
    d = kernel.dim

    if d == 0:
        ts = [int(s if np.isscalar(s) else s[-1]) for s in starts]

        def fn(idx):
            Z = pinning_batch(kernel, seed, idx + first, law, params, N)
            return Z[:, ts].copy()

    else:
        times = sorted({int(t) for _, t in starts})
        if d == 2:
            radius = max(0, max(max(abs(x[0] + x[1]), abs(x[0] - x[1])) - t for x, t in starts))
        else:
            radius = 0
        classes = {srw2d_class(x, t, N) for x, t in starts} if d == 2 else (0, 1)
        batch = block_size(kernel, N, radius)

        def fn(idx):
            s = partition_batch(
                kernel, seed, idx + first, law, params, N, radius=radius, keep=times, classes=classes
            )
            return np.stack([np.atleast_1d(s.value(x, t)) for x, t in starts], axis=1)

        return np.concatenate(map_realizations(fn, samples, threads, batch), axis=0)
    return np.concatenate(map_realizations(fn, samples, threads), axis=0)


def block_size(kernel: LatticeKernel, N: int, radius: int = 0) -> int:
    """Realizations per block so that one sweep stays inside the cell budget."""
    if kernel.dim == 0:
        return BATCH
    if kernel.dim == 2:
        per = sum((2 * (radius + t) + 1) ** 2 for t in range(N + 1))
    else:
        per = (N + 1) * (2 * int(kernel.window_radius[min(N, kernel.n_max)]) + 1)
    return int(max(1, min(BATCH, DEFAULT_CELL_BUDGET // per)))


def psi_weight(name: str, d: int) -> FieldWeight:
    lo = [-1.0] * d + [0.0]
    hi = [1.0] * d + [1.0]
    if name == "one":
        return FieldWeight(lambda x, t: np.ones(len(t)), lo, hi)
    if name == "tent":
        return FieldWeight(
            lambda x, t: (1.0 - np.abs(2.0 * t - 1.0)) * np.prod(1.0 - np.abs(x), axis=1), lo, hi
        )
    if name == "bump":

        def f(x, t):
            r2 = (2.0 * t - 1.0) ** 2 + np.sum(x * x, axis=1)
            out = np.zeros(len(t))
            ok = r2 < 1.0
            out[ok] = np.exp(1.0 - 1.0 / (1.0 - r2[ok]))
            return out

        return FieldWeight(f, lo, hi)
    raise ConfigError(f"unknown psi {name!r}")


def zeta_layout(kernel: LatticeKernel, overlap: OverlapTable, N: int, zeta: float):
    """A pair of start points whose separation realises ``zeta`` as closely as
    the lattice allows. Returns (X, X', attained zeta)."""
    R = overlap.R[: N + 1]
    n = int(np.searchsorted(R, zeta * R[N], side="left")) if zeta > 0 else 0
    n = min(max(n, 0), N - 1)
    if n > 1 and abs(R[n - 1] - zeta * R[N]) < abs(R[n] - zeta * R[N]):
        n -= 1
    d = kernel.dim
    if d == 0:
        X, Xp = 0, n
    elif d == 1:
        X, Xp = ((0,), 0), ((n,), 0)
    else:
        # even offsets keep both points on the same parity sublattice
        X = ((0, 0), 0)
        best = None
        a_hi = 2 * (math.isqrt(N) // 2)
        for a in range(2, max(a_hi, 2) + 1, 2):
            z = triple_norm_zeta(overlap, N, X, ((a, 0), 0))[1]
            if best is None or abs(z - zeta) < abs(best[1] - zeta):
                best = (a, z)
        Xp = ((best[0], 0), 0)
    _, z = triple_norm_zeta(overlap, N, X, Xp) if Xp not in (0, ((0,), 0)) else (0, 0.0)
    return X, Xp, z


# ---------------------------------------------------------------------------
# cells


def _cell_kernel(cfg: ExperimentConfig, N: int, threads: int) -> list:
    kernel, ov = get_kernel(cfg.model, max(2 * N, 2), cfg.tail_tol)
    rows = []
    n_values = sorted({1, 2, max(1, N // 4), max(1, N // 2), N})
    for n in n_values:
        rows.append(
            {
                "model": cfg.model.value,
                "n": n,
                "r_n": float(ov.r[n]),
                "R_n": float(ov.R[n]),
                "R_2n_over_R_n": float(ov.R[2 * n] / ov.R[n]),
                "llt": llt_diagnostic(kernel, n),
                "tail_mass": float(kernel.tail_mass[n]),
            }
        )
    return rows


def _origin(kernel: LatticeKernel):
    return {0: 0, 1: ((0,), 0), 2: ((0, 0), 0)}[kernel.dim]


def _cell_single(cfg: ExperimentConfig, N: int, bh: float, threads: int) -> list:
    kernel, ov = get_kernel(cfg.model, N, cfg.tail_tol)
    params = eta_params_for(cfg, bh / math.sqrt(ov.R_at(N)))
    z = start_samples(kernel, cfg.seed, cfg.disorder_law, params, N, [_origin(kernel)], cfg.samples, threads)[:, 0]
    summ = summarize(z, cfg.model.value, N, bh, cfg.theta, cfg.batches)
    row = summ.row()
    row["second_moment_exact"] = second_moment_exact(ov, params, N)
    row["limit_second_moment"] = 1.0 / (1.0 - bh * bh) if bh < 1 else float("inf")
    return [row]


def _cell_multipoint(cfg: ExperimentConfig, N: int, bh: float, threads: int) -> list:
    kernel, ov = get_kernel(cfg.model, 2 * N if cfg.model is ModelKind.CAUCHY1D else N, cfg.tail_tol)
    params = eta_params_for(cfg, bh / math.sqrt(ov.R_at(N)))
    rows = []
    layouts = [zeta_layout(kernel, ov, N, z) for z in cfg.zeta_targets]
    exact = [cross_moment_exact(kernel, ov, params, N, X, Xp) for X, Xp, _ in layouts]
    starts = [layouts[0][0]] + [Xp for _, Xp, _ in layouts]
    mc = start_samples(kernel, cfg.seed, cfg.disorder_law, params, N, starts, cfg.samples, threads)
    C, se, dropped = covariance_of_logs(mc, cfg.batches)
    for j, ((X, Xp, z), ex) in enumerate(zip(layouts, exact)):
        rows.append(
            {
                "model": cfg.model.value,
                "N": N,
                "beta_hat": bh,
                "zeta_target": cfg.zeta_targets[j],
                "zeta": z,
                "cross_moment_exact": ex,
                "cross_moment_limit": (1 - bh * bh * z) / (1 - bh * bh) if bh < 1 else float("inf"),
                "cov_log_mc": float(C[0, j + 1]),
                "cov_log_se": float(se[0, j + 1]),
                "cov_limit": cov_limit(bh, z) if bh < 1 else float("inf"),
                "dropped": dropped,
            }
        )
    return rows


def _cell_field(cfg: ExperimentConfig, N: int, bh: float, threads: int) -> list:
    kernel, ov = get_kernel(cfg.model, N, cfg.tail_tol)
    params = eta_params_for(cfg, bh / math.sqrt(ov.R_at(N)))
    d = kernel.dim
    psi = psi_weight(cfg.psi, d)
    R_N = ov.R_at(N)
    radius = 2 * math.ceil(N ** (1.0 / d)) if d == 2 else 0
    if d == 0:
        t = np.arange(N + 1)
        w = psi(np.zeros((N + 1, 0)), t / N)

        def fn(idx):
            Z = pinning_batch(kernel, cfg.seed, idx, cfg.disorder_law, params, N)
            return math.sqrt(R_N) * ((Z - 1.0) @ w) / N

        exact = field_variance_exact(kernel, ov, params, N, psi)
    else:

        def fn(idx):
            s = partition_batch(kernel, cfg.seed, idx, cfg.disorder_law, params, N, radius=radius)
            return np.atleast_1d(field_functional_J(s, ov, psi))

        exact = float("nan")
    batch = block_size(kernel, N, radius)
    J = np.concatenate(map_realizations(fn, cfg.samples, threads, batch))
    target = float("nan")
    if bh < 1 and d <= 1:
        target = sigma_psi_quadrature(CovKernel(d), LimitLaw(bh), psi)[0]
    dev = (J - J.mean()) ** 2
    return [
        {
            "model": cfg.model.value,
            "N": N,
            "beta_hat": bh,
            "psi": cfg.psi,
            "J_mean": float(J.mean()),
            "J_mean_se": batch_se(J, cfg.batches),
            "J_var": float(J.var(ddof=1)),
            "J_var_se": batch_se(dev, cfg.batches),
            "J_var_exact": exact,
            "sigma_psi_sq": target,
        }
    ]


def theta_samples(cfg: ExperimentConfig, N: int, threads: int, sequences=None) -> tuple[dict, dict]:
    """Theta_i samples and their exact variances for |i| = 1 blocks and (3, 1)."""
    kernel, ov = get_kernel(cfg.model, N, cfg.tail_tol)
    blocks = block_boundaries(ov, N, cfg.M)
    params = eta_params_for(cfg, 0.0 if cfg.direct_eta else 1.0 / math.sqrt(ov.R_at(N)))
    if sequences is None:
        sequences = [(i,) for i in range(1, cfg.M + 1)] + ([(3, 1)] if cfg.M >= 3 else [])
    out = {}
    for seq in sequences:
        if kernel.model is ModelKind.RENEWAL_HALF:
            fn = lambda idx, seq=seq: theta_block_batch(
                kernel, cfg.seed, idx, cfg.disorder_law, params, ov, N, blocks, seq
            )
        else:
            fn = lambda idx, seq=seq: np.array(
                [
                    theta_block(kernel, DisorderField(cfg.seed, int(r), cfg.disorder_law), params, ov, N, blocks, seq)
                    for r in idx
                ]
            )
        out[seq] = np.concatenate(map_realizations(fn, cfg.samples, threads))
    var = {seq: theta_variance(ov, N, blocks, seq, params.var_eta) for seq in sequences}
    return out, var


def _cell_theta(cfg: ExperimentConfig, N: int, threads: int) -> list:
    samples, var = theta_samples(cfg, N, threads)
    singles = [s for s in samples if len(s) == 1]
    corr = pairwise_correlations(np.stack([samples[s] for s in singles], axis=1)) if len(singles) > 1 else []
    max_corr = float(np.max(np.abs(corr))) if len(corr) else 0.0
    rows = []
    for seq, x in samples.items():
        rows.append(
            {
                "model": cfg.model.value,
                "N": N,
                "M": cfg.M,
                "index": "-".join(map(str, seq)),
                "mean": float(x.mean()),
                "var": float(x.var(ddof=1)),
                "var_exact": var[seq],
                "kurtosis": sample_kurtosis(x),
                "max_abs_corr_singles": max_corr,
            }
        )
    return rows


def _cell_she(cfg: ExperimentConfig, eps: float, bh: float, threads: int) -> list:
    N = int(math.floor(eps**-2))
    kernel, ov = get_kernel(ModelKind.SRW2D, N)
    params = EtaParams.from_law(cfg.disorder_law, bh / math.sqrt(ov.R_at(N)))
    m2 = second_moment_exact(ov, params, N)
    t_end = 0.25
    h = eps / 2.0
    run = SheRun(eps=eps, beta_hat=bh, h=h, dt=h * h / 4.0, side=2.0, seed=cfg.seed)

    def fn(idx):
        res = she_grid_solve(run, Mollifier(), t_end, ("center",), runs=len(idx), first_run=int(idx[0]), keep_field=False)
        return res.observables["center"]

    u = np.concatenate(map_realizations(fn, cfg.samples, threads))
    return [
        {
            "eps": eps,
            "N": N,
            "beta_hat": bh,
            "surrogate_second_moment": m2,
            "limit_second_moment": 1.0 / (1.0 - bh * bh) if bh < 1 else float("inf"),
            "grid_mean": float(u.mean()),
            "grid_mean_se": batch_se(u, cfg.batches),
            "grid_var": float(u.var(ddof=1)),
            "grid_cells": run.cells,
            "grid_t_end": t_end,
        }
    ]


def _cell_strong(cfg: ExperimentConfig, N: int, threads: int) -> list:
    kernel, ov = get_kernel(cfg.model, N, cfg.tail_tol)
    table = {}
    for bh in cfg.beta_hat_grid:
        params = eta_params_for(cfg, bh / math.sqrt(ov.R_at(N)))
        table[(N, bh)] = start_samples(
            kernel, cfg.seed, cfg.disorder_law, params, N, [_origin(kernel)], cfg.samples, threads
        )[:, 0]
    rows, violations = strong_disorder_scan(table, cfg.theta, cfg.batches)
    bad = {(a, b) for _, a, b in violations}
    out = []
    for (n, bh, est, se) in rows:
        bound = (1 - bh * bh) ** (-cfg.theta * (cfg.theta - 1) / 2) if bh < 1 else float("nan")
        out.append(
            {
                "model": cfg.model.value,
                "N": n,
                "beta_hat": bh,
                "theta": cfg.theta,
                "frac_moment": est,
                "frac_moment_se": se,
                "weak_bound": bound,
                "monotone_violation_from_previous": any(b == bh for _, b in bad),
            }
        )
    return out


def _cells(kind: str, cfg: ExperimentConfig) -> list:
    if kind == "kernel":
        return [(f"N{N}", lambda th, N=N: _cell_kernel(cfg, N, th)) for N in cfg.N_grid]
    if kind == "single":
        return [
            (f"N{N}_b{bh!r}", lambda th, N=N, bh=bh: _cell_single(cfg, N, bh, th))
            for N in cfg.N_grid
            for bh in cfg.beta_hat_grid
        ]
    if kind == "multipoint":
        return [
            (f"N{N}_b{bh!r}", lambda th, N=N, bh=bh: _cell_multipoint(cfg, N, bh, th))
            for N in cfg.N_grid
            for bh in cfg.beta_hat_grid
        ]
    if kind == "field":
        return [
            (f"N{N}_b{bh!r}", lambda th, N=N, bh=bh: _cell_field(cfg, N, bh, th))
            for N in cfg.N_grid
            for bh in cfg.beta_hat_grid
        ]
    if kind == "theta":
        return [(f"N{N}_M{cfg.M}", lambda th, N=N: _cell_theta(cfg, N, th)) for N in cfg.N_grid]
    if kind == "she":
        return [
            (f"eps{eps!r}_b{bh!r}", lambda th, eps=eps, bh=bh: _cell_she(cfg, eps, bh, th))
            for eps in cfg.eps_grid
            for bh in cfg.beta_hat_grid
        ]
    if kind == "strong":
        if cfg.direct_eta:
            raise ConfigError("strong-disorder scans need a positive disorder law, not direct mode")
        return [(f"N{N}", lambda th, N=N: _cell_strong(cfg, N, th)) for N in cfg.N_grid]
    raise ConfigError(f"unknown experiment kind {kind!r}")


# ---------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: str, rows: list) -> None:
    if not rows:
        open(path, "w").close()
        return
    keys = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in keys])


def _parse(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    if v in ("True", "False"):
        return v == "True"
    return v


def read_csv(path: str) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def run_experiment(kind: str, cfg: ExperimentConfig, out_dir: str | None = None, threads: int | None = None):
    """Run every cell of ``kind``; returns (exit code, manifest dict)."""
    out_dir = out_dir or cfg.out
    threads = threads or cfg.threads
    try:
        cfg.validate()
        cells = _cells(kind, cfg)
    except ConfigError as exc:
        return EXIT_CONFIG, {"error": str(exc)}
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "kind": kind,
        "config": cfg.echo(),
        "seed": cfg.seed,
        "rng_scheme": RNG_SCHEME,
        "versions": {
            "marginal": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "threads": threads,
        "cells": [],
    }
    code = EXIT_OK
    for name, fn in cells:
        t0 = time.perf_counter()
        entry = {"name": name, "file": f"{kind}_{name}.csv"}
        try:
            rows = fn(threads)
            write_csv(os.path.join(out_dir, entry["file"]), rows)
            entry["status"] = "ok"
        except (BudgetError, SizingError, MemoryError) as exc:
            entry["status"] = "budget"
            entry["error"] = f"{type(exc).__name__}: {exc}"
            code = EXIT_BUDGET
        except (KernelError, ArithmeticError, ValueError) as exc:
            entry["status"] = "failed"
            entry["error"] = f"{type(exc).__name__}: {exc}"
            if code == EXIT_OK:
                code = EXIT_CELL_FAILURE
        entry["runtime_s"] = round(time.perf_counter() - t0, 6)
        manifest["cells"].append(entry)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return code, manifest
