"""Time Metropolis sweeps with the compiled kernel and the numpy fallback.

    python3 benchmarks/bench_sweep.py [--sweeps N] [--windows -1:1 -2:1 -2:2]

Both backends draw the same random numbers, so the final fields must agree;
the script checks that before reporting timings.
"""

import argparse
import time

import numpy as np

from padic_phi4.covariance import CutoffWindow
from padic_phi4.lattice import LatticeGeometry
from padic_phi4.mcmc import MCMCConfig, Sampler
from padic_phi4.mcmc.backend import BACKENDS
from padic_phi4.padic import ModelParams
from padic_phi4.wick import Couplings


def time_backend(geometry, couplings, backend, sweeps):
    sampler = Sampler(geometry, couplings, backend)
    config = MCMCConfig(sweeps=sweeps, burn_in=0, seed=1, tune=False)
    start = time.perf_counter()
    result = sampler.run(config, 0)
    return time.perf_counter() - start, result.potentials


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sweeps", type=int, default=200)
    ap.add_argument("--windows", nargs="+", default=["-1:1", "-2:1", "-2:2"])
    ap.add_argument("--epsilon", type=float, default=0.2)
    args = ap.parse_args()

    params = ModelParams(2, 1, args.epsilon)
    couplings = Couplings(params.gbar_star, 0.0)
    print(f"backends available: {sorted(BACKENDS)}")
    print(f"{'window':>8} {'cells':>7} " + " ".join(f"{b + ' ms/sweep':>18}" for b in sorted(BACKENDS)) + "  speedup")
    for w in args.windows:
        r, s = (int(x) for x in w.split(":"))
        g = LatticeGeometry(params, CutoffWindow(r, s))
        times, traces = {}, {}
        for b in sorted(BACKENDS):
            times[b], traces[b] = time_backend(g, couplings, b, args.sweeps)
        if len(traces) == 2 and not np.allclose(traces["cython"], traces["python"], rtol=1e-10, atol=1e-12):
            raise SystemExit(f"backends disagree on window {w}")
        cols = " ".join(f"{1e3 * times[b] / args.sweeps:18.3f}" for b in sorted(BACKENDS))
        speed = f"{times['python'] / times['cython']:8.1f}x" if "cython" in times else "       -"
        print(f"{w:>8} {g.cell_count:7d} {cols} {speed}")


if __name__ == "__main__":
    main()
