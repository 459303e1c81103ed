"""Exact Var(J^psi_N) for the renewal (psi = 1) against the sigma_psi^2 quadrature."""

import argparse
import math

import numpy as np

from marginal.disorder import DisorderLaw, EtaParams
from marginal.kernels import ModelKind, build_kernel, overlap_table
from marginal.limits import CovKernel, LimitLaw, sigma_psi_quadrature
from marginal.partition import FieldWeight, field_variance_exact


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--beta-hat", type=float, default=0.5)
    ap.add_argument("--max-log2", type=int, default=17)
    args = ap.parse_args()
    one = FieldWeight(lambda x, t: np.ones(len(t)), [0.0], [1.0])
    sig, err = sigma_psi_quadrature(CovKernel(0), LimitLaw(args.beta_hat), one)
    print(f"# sigma_psi^2 = {sig!r} (+- {err:.1e})")
    print("N,var_J_exact,gap")
    k = build_kernel(ModelKind.RENEWAL_HALF, 2**args.max_log2)
    ov = overlap_table(k)
    for j in range(8, args.max_log2 + 1):
        N = 2**j
        p = EtaParams.from_law(DisorderLaw.GAUSSIAN, args.beta_hat / math.sqrt(ov.R_at(N)))
        v = field_variance_exact(k, ov, p, N, one)
        print(f"{N},{v!r},{abs(v - sig)!r}")


if __name__ == "__main__":
    main()
