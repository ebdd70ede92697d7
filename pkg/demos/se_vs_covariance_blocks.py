"""How many blocks should be spent on covariance estimation?

Spending more coherence blocks on the phase-shifted covariance pilots gives
better covariance estimates, so the SINR goes up, but every such block costs
uplink pilot overhead. This script tabulates the closed-form uplink and
downlink SE of the three estimated-covariance receivers against N_R, next to
the known-covariance baselines, and marks where the uplink curve peaks.

Usage:
    python demos/se_vs_covariance_blocks.py            # reference system (M = 100)
    python demos/se_vs_covariance_blocks.py --desk     # small 16-antenna system
"""

import argparse

import numpy as np

from covse import PilotBudget, Regularization, SystemConfig, build_covariance_set, se_report


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--desk", action="store_true", help="use the small desk system")
    parser.add_argument("--nq", type=int, nargs="+", help="N_Q values (default depends on system)")
    args = parser.parse_args()

    if args.desk:
        cfg = SystemConfig(L=3, K=2, M=16, P=4)
        nr_grid = [25, 50, 100, 200, 400, 800, 1600, 3200, 6400]
        nq_grid = args.nq or [40, 400]
    else:
        cfg = SystemConfig()
        nr_grid = [125, 250, 500, 1000, 2000, 4000, 8000]
        nq_grid = args.nq or [125, 4000]
    cov = build_covariance_set(cfg)
    reg = Regularization(0.95, 0.95)
    kinds = ["lmmse-type", "el-lmmse-type", "el-lmmse-type-regp"]
    print(f"M={cfg.M} L={cfg.L} K={cfg.K} P={cfg.P}, alpha_R=alpha_Q=0.95, lambda={cfg.lam}")

    # Baselines do not pay for covariance pilots.
    base = PilotBudget(cfg.P, cfg.C_u, cfg.tau_s, 0, nq_grid[0])
    for kind in ("lmmse", "el-lmmse"):
        r = se_report(cov, 0, kind, base, reg, cfg.lam)
        print(f"  known covariance {kind:9s}: UL {r.se_ul:.4f}  DL {r.se_dl:.4f} bit/s/Hz")

    for N_Q in nq_grid:
        print(f"\nN_Q = {N_Q}")
        print("  N_R     prelog  " + "  ".join(f"{k + ' UL':>20s} {k + ' DL':>20s}" for k in kinds))
        table = {k: [] for k in kinds}
        for N_R in nr_grid:
            budget = PilotBudget(cfg.P, cfg.C_u, cfg.tau_s, N_R, N_Q)
            cells = []
            for k in kinds:
                try:
                    r = se_report(cov, 0, k, budget, reg, cfg.lam)
                except ArithmeticError as exc:  # poles and invalid regimes
                    cells.append(f"{type(exc).__name__:>41s}")
                    table[k].append(np.nan)
                    continue
                table[k].append(r.se_ul)
                cells.append(f"{r.se_ul:20.4f} {r.se_dl:20.4f}")
            print(f"  {N_R:<6d}  {budget.prelog:.5f} " + "  ".join(cells))
        for k, se in table.items():
            se = np.asarray(se)
            if np.all(np.isnan(se)):
                continue
            i = int(np.nanargmax(se))
            where = "interior" if 0 < i < len(se) - 1 else "at the grid edge"
            print(f"  {k}: UL SE peaks at N_R = {nr_grid[i]} ({where})")


if __name__ == "__main__":
    main()
