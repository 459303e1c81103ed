"""E[Z^theta] at beta_hat < 1 against the log-normal value (1 - beta_hat^2)^(-theta(theta-1)/2)."""

import argparse
import math

import numpy as np

from marginal.disorder import DisorderLaw, EtaParams
from marginal.harness.stats import fractional_moment
from marginal.kernels import ModelKind, build_kernel, overlap_table
from marginal.partition import pinning_batch


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--beta-hat", type=float, default=0.9)
    ap.add_argument("--theta", type=float, default=0.5)
    ap.add_argument("--samples", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    bh, th = args.beta_hat, args.theta
    value = (1 - bh * bh) ** (-th * (th - 1) / 2)
    print(f"# log-normal value {value!r}")
    print("N,estimate,se")
    k = build_kernel(ModelKind.RENEWAL_HALF, 2**14)
    ov = overlap_table(k)
    for j in (8, 10, 12, 14):
        N = 2**j
        p = EtaParams.from_law(DisorderLaw.GAUSSIAN, bh / math.sqrt(ov.R_at(N)))
        z = np.concatenate(
            [
                pinning_batch(k, args.seed, np.arange(a, min(a + 500, args.samples)), DisorderLaw.GAUSSIAN, p, N)[:, 0]
                for a in range(0, args.samples, 500)
            ]
        )
        est, se = fractional_moment(z, th)
        print(f"{N},{est!r},{se!r}")


if __name__ == "__main__":
    main()
