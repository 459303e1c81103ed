"""Experiment configuration and the flat key=value config file format.

Recognised keys (unknown keys are an error)::

    model          SRW2D | CAUCHY1D | RENEWAL_HALF
    N_grid         comma-separated horizons, e.g. 1024,4096
    M              number of blocks for theta runs
    beta_hat_grid  comma-separated beta_hat values
    law            gaussian | rademacher | direct
    samples        realizations per cell
    batches        batch count for batch-mean errors (>= 30)
    seed           64-bit seed
    theta          fractional moment exponent in (0, 1)
    zeta_targets   comma-separated zeta values for multipoint runs
    psi            one | tent | bump
    tail_tol       CAUCHY1D kernel tail tolerance
    eps_grid       comma-separated eps values for she runs
    K              chaos truncation order
    threads        worker threads
    out            output directory

Blank lines and lines starting with # are ignored.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from ..disorder import DisorderLaw
from ..kernels import ModelKind

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config"]


class ConfigError(ValueError):
    pass


def _floats(s: str) -> tuple:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _ints(s: str) -> tuple:
    out = []
    for v in s.split(","):
        v = v.strip()
        if not v:
            continue
        if "^" in v:
            base, exp = v.split("^")
            out.append(int(base) ** int(exp))
        else:
            out.append(int(v))
    return tuple(out)


@dataclass
class ExperimentConfig:
    model: ModelKind = ModelKind.RENEWAL_HALF
    N_grid: tuple = (64,)
    M: int = 4
    beta_hat_grid: tuple = (0.5,)
    law: str = "gaussian"
    samples: int = 600
    batches: int = 30
    seed: int = 0
    theta: float = 0.5
    zeta_targets: tuple = (0.25, 0.5, 0.75)
    psi: str = "one"
    tail_tol: float = 1e-2
    eps_grid: tuple = (0.125,)
    K: int = 6
    threads: int = 1
    out: str = "runs"
    extra: dict = field(default_factory=dict)

    @property
    def direct_eta(self) -> bool:
        return self.law == "direct"

    @property
    def disorder_law(self) -> DisorderLaw:
        return DisorderLaw.GAUSSIAN if self.direct_eta else DisorderLaw.parse(self.law)

    def validate(self) -> "ExperimentConfig":
        if not self.N_grid or not self.beta_hat_grid:
            raise ConfigError("N_grid and beta_hat_grid must be nonempty")
        if any(n < 1 for n in self.N_grid):
            raise ConfigError("N values must be >= 1")
        if any(b < 0 for b in self.beta_hat_grid):
            raise ConfigError("beta_hat values must be >= 0")
        if self.law not in ("gaussian", "rademacher", "direct"):
            raise ConfigError(f"unknown law {self.law!r}")
        if self.batches < 30:
            raise ConfigError("batch-mean errors need at least 30 batches")
        if self.samples < 2 * self.batches:
            raise ConfigError(f"samples must be >= 2 x batches = {2 * self.batches}")
        if not 0.0 < self.theta < 1.0:
            raise ConfigError("theta must lie in (0, 1)")
        if any(not 0.0 <= z <= 1.0 for z in self.zeta_targets):
            raise ConfigError("zeta targets must lie in [0, 1]")
        if self.psi not in ("one", "tent", "bump"):
            raise ConfigError(f"unknown psi {self.psi!r}")
        if not 0.0 < self.tail_tol < 1.0:
            raise ConfigError("tail_tol must lie in (0, 1)")
        if self.M < 1 or self.K < 0 or self.threads < 1:
            raise ConfigError("M >= 1, K >= 0 and threads >= 1 are required")
        return self

    def echo(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, ModelKind) else (list(v) if isinstance(v, tuple) else v)
        return out


_PARSERS = {
    "model": ModelKind.parse,
    "N_grid": _ints,
    "M": int,
    "beta_hat_grid": _floats,
    "law": lambda s: s.strip().lower(),
    "samples": int,
    "batches": int,
    "seed": int,
    "theta": float,
    "zeta_targets": _floats,
    "psi": lambda s: s.strip().lower(),
    "tail_tol": float,
    "eps_grid": _floats,
    "K": int,
    "threads": int,
    "out": str.strip,
}


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = dataclasses.replace(base) if base is not None else ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _PARSERS[key](value))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return cfg.validate()


def load_config(path: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read(), base)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
