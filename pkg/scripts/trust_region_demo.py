"""Solve a few trust-region instances and check each against the sampling oracle."""

import numpy as np

from vcrd.trust_region import first_order_residual, solve_trust_region, verify_optimality


def main():
    pi = np.array([0.5, 0.3, 0.2])
    r = np.array([0.0, 1.0, 0.0])
    print(f"{'delta':>8} {'eta':>10} {'KL':>10} {'E[r]':>8} {'active':>7} {'oracle':>7}")
    for delta in (0.01, 0.05, 0.2, 1.0, 2.0):
        sol = solve_trust_region(pi, r, delta)
        rep = verify_optimality(pi, r, delta, sol, n_samples=5000)
        print(f"{delta:>8.3g} {sol.eta:>10.5g} {sol.achieved_kl:>10.5g} {sol.expected_reward:>8.4f} "
              f"{str(sol.active):>7} {'pass' if rep.passed else 'FAIL':>7}")
    print("\nfirst-order remainder, halving eta:")
    for eta in (4e-2, 2e-2, 1e-2, 5e-3):
        a, b = first_order_residual(pi, r, eta), first_order_residual(pi, r, eta / 2)
        print(f"  eta={eta:<7g} residual={a:.3e} ratio={a / b:.4f}")


if __name__ == "__main__":
    main()
