"""Command-line entry point: ``marginal <kind> [--config FILE] [--seed S] [--threads T] [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, ExperimentConfig, load_config
from .experiments import EXIT_CONFIG, KINDS, run_experiment

log = logging.getLogger("marginal")

_HELP = {
    "kernel": "overlap table, local-limit diagnostics and tail masses",
    "single": "single-point moments, log-moments and KS distance",
    "multipoint": "exact cross moments and covariance of logs",
    "field": "variance of the rescaled field functional",
    "theta": "block variable moments and correlations",
    "she": "SHE surrogate second moments and grid mean preservation",
    "strong": "fractional moments across beta_hat and N",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="marginal", description="Marginally relevant disorder experiments.")
    sub = p.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind, help=_HELP[kind])
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
        if args.out:
            cfg.out = args.out
        cfg.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code, manifest = run_experiment(args.kind, cfg)
    if "error" in manifest:
        print(f"config error: {manifest['error']}", file=sys.stderr)
        return code
    for cell in manifest["cells"]:
        line = f"{cell['name']}: {cell['status']} ({cell['runtime_s']:.2f}s)"
        if "error" in cell:
            line += f" {cell['error']}"
        log.info(line)
        if cell["status"] != "ok":
            print(line, file=sys.stderr)
    print(f"wrote {len(manifest['cells'])} cell(s) to {cfg.out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
