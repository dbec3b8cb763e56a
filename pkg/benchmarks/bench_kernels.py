"""Time the aggregation kernels on every importable backend.

    python benchmarks/bench_kernels.py [--updates 5] [--dim 10000] [--repeat 20]

Prints one line per (kernel, backend) with the best per-call time and the
speedup of the compiled backend over the numpy fallback.
"""

import argparse
import timeit

import numpy as np

from fedsec.kernels import backends

CASES = {
    "coord_median": lambda k, X: k.coord_median(X),
    "trimmed_mean": lambda k, X: k.trimmed_mean(X, 1),
    "krum_scores": lambda k, X: k.krum_scores(X, 1) if X.shape[0] >= 4 else None,
    "clip_mean": lambda k, X: k.clip_mean(X, 1.0),
    "sign_mean": lambda k, X: k.sign_mean(X, 0.01),
    "weiszfeld": lambda k, X: k.weiszfeld(X, 1e-8, 200, 1e-12),
    "max_cosine": lambda k, X: k.max_cosine(X[0].copy(), X[1:].copy()),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--updates", type=int, default=5)
    ap.add_argument("--dim", type=int, default=10_000)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    X = np.ascontiguousarray(np.random.default_rng(0).normal(size=(args.updates, args.dim)))
    impls = backends()
    print(f"{args.updates} updates x {args.dim} parameters; backends: {', '.join(impls)}")
    for name, call in CASES.items():
        times = {}
        for bname, k in impls.items():
            t = timeit.repeat(lambda: call(k, X), number=1, repeat=args.repeat)
            times[bname] = min(t)
        line = "  ".join(f"{b} {1e3 * t:8.3f} ms" for b, t in times.items())
        if "compiled" in times and "python" in times:
            line += f"  speedup x{times['python'] / times['compiled']:.1f}"
        print(f"{name:14s} {line}")


if __name__ == "__main__":
    main()
