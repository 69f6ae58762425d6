"""Table of chi(alpha) from the zeta series, the N = 2^26 residual and Richardson extrapolation."""
import argparse

import numpy as np

from fluctlab.lattice import chi_alpha, richardson_chi, riemann_residual


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--alphas", default="0.1,0.25,0.5,0.75,0.9")
    p.add_argument("--tol", type=float, default=1e-8)
    args = p.parse_args()
    print(f"{'alpha':>6} {'chi':>14} {'residual(2^26)':>16} {'richardson':>14}")
    for a in (float(v) for v in args.alphas.split(",")):
        chi = chi_alpha(a, args.tol)
        res = riemann_residual(n_half=1 << 26, alpha=a)
        rich = richardson_chi(a) if a > 0 else res
        print(f"{a:6.3f} {chi:14.9f} {res:16.9f} {rich:14.9f}")
    # alpha -> 1 blows up like -2/(1-alpha)
    a = np.array([0.95, 0.98, 0.99])
    print("near 1:", ", ".join(f"{x}: {chi_alpha(x, 1e-6) * (1 - x):.4f}" for x in a))


if __name__ == "__main__":
    main()
