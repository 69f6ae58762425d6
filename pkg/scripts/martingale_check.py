"""Monte Carlo variance of the eta-martingale for free diffusion against the bracket prediction."""
import argparse
import math

import numpy as np

from fluctlab.fluctuation import martingale_cov, martingale_variance
from fluctlab.lattice import build_lattice
from fluctlab.meanfield import DensityPath, uniform_grid
from fluctlab.model import build_free
from fluctlab.simulator import SimConfig, simulate
from fluctlab.testfns import TestFn1


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--alpha", type=float, default=0.25)
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--replicas", type=int, default=2000)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--k", type=int, default=1, help="test function sin(k theta)")
    args = p.parse_args()
    model = build_free(args.sigma, "circle")
    f = TestFn1("sin", k=args.k)
    path = DensityPath.stationary(uniform_grid(64, model.disorder_law), model, args.alpha, 1.0)
    tr = simulate(model, build_lattice(args.n, args.alpha), SimConfig(dt=1e-2, record_stride=100),
                  martingales=(f,), replicas=args.replicas)
    m = tr.values(f"M:{f.id}")[-1]
    kappa = martingale_cov(f, f, 1.0, path).eta
    pred = martingale_variance(kappa, args.n, args.alpha)
    var = np.var(m, ddof=1)
    se = math.sqrt(np.var((m - m.mean()) ** 2, ddof=1) / m.size)
    print(f"kappa={kappa:.6f} predicted={pred:.6f} mc={var:.6f} stderr={se:.6f} z={(var - pred) / se:+.2f}")


if __name__ == "__main__":
    main()
