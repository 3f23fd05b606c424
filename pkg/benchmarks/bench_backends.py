"""Compare the numba kernels with the pure-numpy fallback.

The backend is fixed at import time, so each measurement runs in a fresh
interpreter with QTREND_DISABLE_NUMBA set or unset. Numba timings exclude
compilation (one warm-up call first).

    python benchmarks/bench_backends.py --sizes 1000,5000 --repeats 3
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from qtrend import backend_name, gen_peaks, PeaksDesign, QuantileSpec, solve_block
from qtrend.consensus import fit_windows, make_layout
from qtrend import _kernels

n, repeats = int(sys.argv[1]), int(sys.argv[2])
s = gen_peaks(PeaksDesign(n, seed=1))
spec = QuantileSpec((0.05, 0.1, 0.15), (n / 5.0,))
rows = np.ascontiguousarray(np.random.default_rng(0).normal(size=(n, 5)))
out = np.empty_like(rows)

def best(fn):
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)

res = {
    "backend": backend_name(),
    "n": n,
    "solve_block": best(lambda: solve_block(s.y, spec)),
    "fit_windows_W2": best(lambda: fit_windows(s.y, spec, make_layout(n, 2, min(500, n // 5)))),
    "pava_rows": best(lambda: _kernels.pava_rows(rows, out)),
}
print(json.dumps(res))
"""


def measure(n, repeats, disable):
    env = dict(os.environ)
    if disable:
        env["QTREND_DISABLE_NUMBA"] = "1"
    else:
        env.pop("QTREND_DISABLE_NUMBA", None)
    out = subprocess.run([sys.executable, "-c", WORKER, str(n), str(repeats)], env=env,
                         check=True, capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="1000,5000")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--json", help="also write the raw measurements here")
    args = ap.parse_args(argv)
    results = []
    for n in (int(v) for v in args.sizes.split(",")):
        nb = measure(n, args.repeats, disable=False)
        np_ = measure(n, args.repeats, disable=True)
        results += [nb, np_]
        for key in ("solve_block", "fit_windows_W2", "pava_rows"):
            print(f"n={n:6d} {key:15s} numba {nb[key]:9.4f}s  numpy {np_[key]:9.4f}s  "
                  f"speedup {np_[key] / nb[key]:6.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
