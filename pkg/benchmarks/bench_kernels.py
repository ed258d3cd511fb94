"""Compare the compiled and numpy kernel backends on random sparse graphs.

    python3 benchmarks/bench_kernels.py [--nodes 5000] [--degree 10] [--dim 32] [--repeat 5]

Prints the best-of-repeat time per call and the speedup of the compiled
backend. Outputs of the two backends are checked for equality first.
"""

import argparse
import timeit

import numpy as np

from coevognn import kernels


def random_csr(n: int, degree: int, rng):
    counts = rng.poisson(degree, n)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    indices = np.concatenate([np.sort(rng.choice(n, c, replace=False)) for c in counts]).astype(np.int64)
    values = rng.random(indices.size)
    return indptr, indices, values


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--nodes", type=int, default=5000)
    p.add_argument("--degree", type=int, default=10)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    indptr, indices, values = random_csr(args.nodes, args.degree, rng)
    dense = rng.normal(size=(args.nodes, args.dim))
    rows = rng.integers(0, args.nodes, 20000)
    cols = rng.integers(0, args.nodes, 20000)
    calls = {
        "csr_spmm": lambda impl: kernels.csr_spmm(indptr, indices, values, dense, impl),
        "csr_spmm_t": lambda impl: kernels.csr_spmm_t(indptr, indices, values, dense, args.nodes, impl),
        "csr_edge_dot": lambda impl: kernels.csr_edge_dot(indptr, indices, dense, dense, impl),
        "csr_contains": lambda impl: kernels.csr_contains(indptr, indices, rows, cols, impl),
    }
    impls = kernels.backends()
    print(f"graph: {args.nodes} nodes, {indices.size} edges, dim {args.dim}; backends {sorted(impls)}")
    if "native" not in impls:
        print("compiled backend not built; timing the numpy fallback only")
    print(f"{'kernel':<14}" + "".join(f"{name:>12}" for name in sorted(impls)) + "     speedup")
    for name, call in calls.items():
        outs = {k: call(impl) for k, impl in impls.items()}
        ref = outs["python"]
        for k, out in outs.items():
            if not np.allclose(out, ref, rtol=1e-12, atol=1e-12):
                raise SystemExit(f"{name}: backend {k} disagrees with the fallback")
        best = {k: min(timeit.repeat(lambda: call(impl), number=1, repeat=args.repeat))
                for k, impl in impls.items()}
        speed = f"{best['python'] / best['native']:9.1f}x" if "native" in best else ""
        print(f"{name:<14}" + "".join(f"{best[k] * 1e3:10.2f}ms" for k in sorted(best)) + speed)


if __name__ == "__main__":
    main()
