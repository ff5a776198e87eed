"""Compare the compiled kernels with the pure-Python fallback.

Run ``python benchmarks/bench_kernels.py``. Both backends go through the
same public entry points; only the kernel functions are swapped.
"""

import argparse
import timeit

from rspmle import Observation, RspContext, build_grid, gaussian_landscape, make_rng, multi_node_log_likelihood, sample_path
from rspmle import _core_py, _kernels

try:
    from rspmle import _core
except ImportError:
    _core = None


def _use(impl):
    _kernels.chain_series = impl.chain_series
    _kernels.sample_walk = impl.sample_walk


def _cases(side):
    g = build_grid(side, side, gaussian_landscape(side, side, seed=7))
    n = side * side
    obs = Observation(0, n - 1, "nodes", (side + 1, n // 2, n - side - 2))

    def series():
        multi_node_log_likelihood(RspContext(g, 0.5), obs.s, obs.t, list(obs.obs))

    def walks():
        ctx = RspContext(g, 0.05)
        rng = make_rng(1)
        for _ in range(50):
            sample_path(ctx, 0, n - 1, rng)

    return {"chain_series": series, "sample_walk": walks}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--side", type=int, default=20, help="grid side length")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    backends = [("python", _core_py)] + ([("compiled", _core)] if _core is not None else [])
    print(f"{'kernel':<14}{'backend':<10}{'best [s]':>10}")
    best = {}
    for name, fn in _cases(args.side).items():
        for label, impl in backends:
            _use(impl)
            t = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            best[name, label] = t
            print(f"{name:<14}{label:<10}{t:>10.4f}")
    if _core is not None:
        for name in _cases(args.side):
            print(f"{name}: compiled is {best[name, 'python'] / best[name, 'compiled']:.1f}x faster")
    else:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
