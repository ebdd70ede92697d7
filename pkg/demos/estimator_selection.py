"""Choosing between the full and the element-wise estimated-covariance receiver.

Which receiver wins depends on the sample budget. With few blocks for the
sample covariance Q_hat, the full-matrix filter suffers from the inverse of a
noisy M x M matrix and the element-wise filter wins for every N_R. Once N_Q
passes a threshold, the full filter overtakes it beyond a crossing point
N_bar_R. This script prints N_bar_R over a range of N_Q and the smallest N_Q
for which a crossing exists, for both links.

Usage:
    python demos/estimator_selection.py [--M 16] [--full]
"""

import argparse

from covse import Regularization, SystemConfig, build_covariance_set, nq_threshold, nr_threshold


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--M", type=int, default=16, help="antennas for the small system")
    parser.add_argument("--full", action="store_true", help="use the 7-cell, 100-antenna system")
    args = parser.parse_args()

    cfg = SystemConfig() if args.full else SystemConfig(L=3, K=2, M=args.M, P=4)
    cov = build_covariance_set(cfg)
    reg = Regularization(0.95, 0.95)
    M = cfg.M
    nq_values = sorted({M + 2, 2 * M, 4 * M, 8 * M, 16 * M, 40 * M})
    print(f"M={M} L={cfg.L} K={cfg.K}; full filter needs N_Q > M + 1 = {M + 1}")
    print(f"{'N_Q':>6s} {'N_bar_R UL':>12s} {'N_bar_R DL':>12s}")
    for N_Q in nq_values:
        vals = []
        for link in ("ul", "dl"):
            res = nr_threshold(cov, 0, N_Q, reg, link, lam=cfg.lam)
            vals.append("none" if res.is_none else f"{res.N_bar:.1f}")
        print(f"{N_Q:6d} {vals[0]:>12s} {vals[1]:>12s}")
    # "none" means the element-wise filter is preferable at every N_R.
    for link in ("ul", "dl"):
        nq = nq_threshold(cov, 0, reg, link, lam=cfg.lam, nq_range=(M + 2, 100 * M))
        print(f"smallest N_Q with a crossing ({link.upper()}): {nq if nq is not None else 'none in range'}")


if __name__ == "__main__":
    main()
