"""Compare the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json]

Both backends get identical inputs; the script also checks that their
outputs agree exactly before reporting timings.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from tdprobe import _kernels


def _ks_case(rng):
    a = np.sort(rng.exponential(2e6, 2000))
    b = np.sort(rng.exponential(1.5e6, 2000))
    return (a, b), lambda k: k.ks_sorted(a, b)


def _allocate_case(rng):
    d = rng.uniform(0, 5e6, 64)
    w = rng.uniform(0.5, 3, 64)
    out = np.zeros(64)

    def call(k):
        for _ in range(200):
            k.allocate(d, w, 60e6, out)
        return out.copy()

    return (d, w), call


def _link_case(rng):
    ticks, flows = 6000, 8  # one minute of 10 ms ticks
    offered = rng.uniform(0, 6e6, (ticks, flows))
    rate = np.where(np.arange(flows) % 2 == 0, 250_000.0, 0.0)
    burst = np.where(rate > 0, 125_000.0, 0.0)
    weight = rng.uniform(0.5, 2.0, flows)

    def call(k):
        alloc, dem = np.zeros_like(offered), np.zeros_like(offered)
        k.simulate_link(offered, rate, burst, weight, 20e6, 0.01, alloc, dem)
        return alloc

    return offered, call


CASES = {"ks_sorted": _ks_case, "allocate x200": _allocate_case, "simulate_link 6000x8": _link_case}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)

    if _kernels.compiled is None:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1

    rows = []
    for name, make in CASES.items():
        _, call = make(np.random.default_rng(0))
        ref = call(_kernels.python)
        got = call(_kernels.compiled)
        if not np.array_equal(np.asarray(ref), np.asarray(got)):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        times = {}
        for label, k in (("python", _kernels.python), ("cython", _kernels.compiled)):
            times[label] = min(timeit.repeat(lambda: call(k), number=1, repeat=args.repeat))
        rows.append({"kernel": name, **times, "speedup": times["python"] / times["cython"]})

    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        print(f"{'kernel':<22}{'python s':>12}{'cython s':>12}{'speedup':>10}")
        for r in rows:
            print(f"{r['kernel']:<22}{r['python']:>12.4f}{r['cython']:>12.5f}{r['speedup']:>9.0f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
