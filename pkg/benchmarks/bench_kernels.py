"""Compare the numba and pure-numpy kernel backends.

Each backend runs in its own interpreter because the choice is made at
import time from ``PSEUDOLAB_NO_NUMBA``.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--N 2000]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, timeit
import numpy as np
from pseudolab import _kernels as K
from pseudolab.discretize import grid_assemble, grid_band_dd
from pseudolab.model import make_model

N, repeat = int(sys.argv[1]), int(sys.argv[2])
op = grid_assemble(make_model("airy", {}), -40, 40, N)
ab = K.to_band(op.matrix, 1, 1)
ab[2] -= 6.0
abdd = grid_band_dd(op, 6.0)
F = np.add.outer(np.linspace(-3, 3, 401) ** 2, np.linspace(-3, 3, 401) ** 2)

cases = {
    "smin_band (double)": lambda: K.smin_band(ab, 1, 1),
    "smin_band_dd (double-double)": lambda: K.smin_band_dd(abdd, 1, 1),
    "legendre_log_series k=1e5": lambda: K.legendre_log_series(100000, 2 ** 0.5),
    "marching_squares 401x401": lambda: K.marching_squares(F, 4.0),
}
out = {"backend": K.BACKEND}
for name, f in cases.items():
    f()  # warm-up, includes JIT compilation
    out[name] = min(timeit.repeat(f, number=1, repeat=repeat))
print(json.dumps(out))
"""


def run(backend, N, repeat):
    env = dict(os.environ)
    env.pop("PSEUDOLAB_NO_NUMBA", None)
    if backend == "numpy":
        env["PSEUDOLAB_NO_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKER, str(N), str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=2000, help="grid size of the banded cases")
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args()
    nb = run("numba", a.N, a.repeat)
    np_ = run("numpy", a.N, a.repeat)
    print(f"backends: {nb['backend']} vs {np_['backend']} (N = {a.N}, best of {a.repeat})")
    print(f"{'kernel':32s} {'numba [s]':>12s} {'numpy [s]':>12s} {'speedup':>9s}")
    for k in nb:
        if k == "backend":
            continue
        print(f"{k:32s} {nb[k]:12.4g} {np_[k]:12.4g} {np_[k] / nb[k]:9.1f}")


if __name__ == "__main__":
    main()
