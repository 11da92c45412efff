"""Compare the compiled and pure-numpy ensemble kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeats 20000] [--size 5]

Times one vote (similarities, split, centered mean) per call on random
committees, plus the bare cosine similarity, for each available backend.
"""
import argparse
import time

import numpy as np

from chunkvote import _pykernels, kernels


def _time(fn, args, repeats):
    for a in args[:100]:
        fn(*a)
    t0 = time.perf_counter_ns()
    for i in range(repeats):
        fn(*args[i % len(args)])
    return (time.perf_counter_ns() - t0) / repeats / 1e3


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20000)
    ap.add_argument("--size", type=int, default=5, help="committee size (K + 1)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    committees = [np.ascontiguousarray(rng.standard_normal((args.size, 7))) for _ in range(1000)]
    pairs = [(c[0].copy(), c[1].copy()) for c in committees]
    backends = {"python": _pykernels}
    if kernels.compiled() is not None:
        backends["cython"] = kernels.compiled()

    print(f"selected backend: {kernels.BACKEND}")
    print(f"{'kernel':<10} {'backend':<8} {'us/call':>9} {'vs python':>10}")
    for label, make in (("vote", lambda b: (b.vote, [(c, 0.5, False) for c in committees])),
                        ("cosine", lambda b: (b.cosine_similarity, pairs))):
        base = None
        for name, mod in backends.items():
            fn, calls = make(mod)
            us = _time(fn, calls, args.repeats)
            base = base or us
            print(f"{label:<10} {name:<8} {us:>9.2f} {base / us:>9.1f}x")


if __name__ == "__main__":
    main()
