"""Time the compiled kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--n 2000] [--dims 16] [--repeat 3]

Each row is the best of ``--repeat`` runs; compilation happens in a warm-up
call that is not timed.
"""
import argparse
import time

import numpy as np

from bayspn import _accel, kernels
from bayspn.encoding import encode
from bayspn.gibbs import TrainConfig, run_chain, sample_log_dirichlet
from bayspn.layout import compile_layout, root_log_density
from bayspn.leaves import ColumnFamilies
from bayspn.region_graph import GraphConfig, build_region_graph
from bayspn.scope import sample_scope_prior


def _best(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--dims", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--iterations", type=int, default=10)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed")

    rng = np.random.default_rng(0)
    gc = GraphConfig(2, 2, 2, 4, 4)
    layout = compile_layout(build_region_graph(gc, args.dims), 4, 4)
    fams = ColumnFamilies.bernoulli(args.dims)
    x = (rng.random((args.n, args.dims)) < np.where(rng.random((args.n, 1)) < 0.5, 0.8, 0.2)).astype(float)
    miss = rng.random(x.shape) < 0.1
    data = encode(x, miss, fams)

    sa = sample_scope_prior(layout.rg, 1.0, rng)
    logw = sample_log_dirichlet(layout, np.ones(layout.num_weights), rng)
    theta = fams.prior_sample(layout.num_leaves, rng)
    y = layout.layout_y(sa.y)
    eta = fams.natural(theta)
    out = []
    root_log_density(layout, logw, eta, y, data.phi, data.observed_any, values_out=out)
    unif = rng.random((data.num_instances, layout.num_regions))
    rn, rp, _, _ = kernels.route(layout, out[0], logw, data.pattern, unif)
    pairs = np.array([(p, d) for p in range(layout.num_real_partitions) for d in range(args.dims)])
    pair_unif = rng.random(len(pairs))
    cfg = TrainConfig(burn_in=args.iterations, num_samples=1, thinning=1, seed=1)

    cases = {
        "route": lambda: kernels.route(layout, out[0], logw, data.pattern, unif),
        "leaf_stats": lambda: kernels.leaf_stats(layout, rn, rp, y, data.phi, data.observed, data.pattern),
        "sweep_y": lambda: kernels.sweep_y(layout, pairs, pair_unif, y.copy(), rn, rp, data.pattern, data.phi,
                                           data.observed, eta, 1.0, False),
        f"chain ({args.iterations + 1} it)": lambda: run_chain(layout, data, cfg),
    }
    print(f"N={args.n} D={args.dims} graph={gc}")
    print(f"{'kernel':<18}{'numba s':>12}{'numpy s':>12}{'speed-up':>10}")
    for name, fn in cases.items():
        times = []
        for flag in (True, False):
            previous = _accel.set_enabled(flag)
            try:
                times.append(_best(fn, args.repeat))
            finally:
                _accel.set_enabled(previous)
        print(f"{name:<18}{times[0]:>12.4f}{times[1]:>12.4f}{times[1] / times[0]:>9.1f}x")


if __name__ == "__main__":
    main()
