"""Compare the numba and numpy sweep kernels.

    python3 benchmarks/bench_kernels.py [--sizes 15,31,63] [--steps 640] [--repeat 5]

Times one forward sweep, one backward sweep and one intermediate-targets
outer iteration (N=4, l_max=1) per grid size and backend, and checks that the
two backends agree.
"""
import argparse
import timeit

import numpy as np

from pintoc import _kernels
from pintoc.algorithms import RunConfig, sitpoc_iterate
from pintoc.heat_core import OpCounter, backward_solve, forward_solve
from pintoc.optimal_control import make_problem


def problem(n, steps):
    pb = make_problem(n, T=steps * 1e-2, M=steps)
    x, y = pb.grid.coords
    return make_problem(n, T=steps * 1e-2, M=steps, y0=np.sin(np.pi * x) * np.sin(np.pi * y),
                        y_target=np.exp(-((x - 0.5) ** 2 + (y - 0.5) ** 2) / 0.02))


def time_backend(name, pb, repeat):
    _kernels.use_backend(name)
    v = np.random.default_rng(0).standard_normal(pb.control_shape)
    cfg = RunConfig(pb, N=4, l_max=1)
    fwd = lambda: forward_solve(pb.op, pb.dt, pb.y0, v)
    bwd = lambda: backward_solve(pb.op, pb.dt, pb.y0, pb.M)
    outer = lambda: sitpoc_iterate(v, cfg, OpCounter())
    fwd(), bwd()  # compile / warm the factor cache
    out = {}
    for label, fn in (("forward", fwd), ("backward", bwd), ("outer", outer)):
        out[label] = min(timeit.repeat(fn, number=1, repeat=repeat))
    return out, fwd()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="15,31,63")
    ap.add_argument("--steps", type=int, default=640)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    previous = _kernels.backend
    print(f"{'n':>4} {'kernel':>9} " + " ".join(f"{b + ' ms':>11}" for b in backends) + "    speedup")
    try:
        for n in (int(s) for s in args.sizes.split(",")):
            pb = problem(n, args.steps)
            results, states = {}, {}
            for b in backends:
                results[b], states[b] = time_backend(b, pb, args.repeat)
            if len(states) == 2:
                np.testing.assert_allclose(states["numba"], states["numpy"], rtol=1e-12, atol=1e-14)
            for kernel in ("forward", "backward", "outer"):
                times = [results[b][kernel] * 1e3 for b in backends]
                speed = f"{times[0] / times[1]:9.2f}x" if len(times) == 2 else ""
                print(f"{n:>4} {kernel:>9} " + " ".join(f"{t:11.2f}" for t in times) + f"  {speed}")
    finally:
        _kernels.use_backend(previous)


if __name__ == "__main__":
    main()
