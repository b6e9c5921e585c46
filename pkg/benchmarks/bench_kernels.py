"""Time the jitted unfold kernels against the pure-numpy fallback.

Runs each path in a subprocess (the path is chosen at import time via the
HMN_NO_NUMBA env flag) and prints a small table. Usage:

    python3 benchmarks/bench_kernels.py [--repeat 50]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = '''
import json, os, sys, time
import numpy as np
from hmn import kernels

repeat = int(sys.argv[1])
cases = [(8, 8, 64, 3), (28, 28, 64, 3), (32, 32, 128, 5)]
rows = []
for h, w, d, k in cases:
    rng = np.random.default_rng(0)
    grid = rng.normal(size=(h, w, d))
    dout = rng.normal(size=(h * w, k * k * d))
    kernels.unfold_grid(grid, k)  # warm the jit cache before timing
    kernels.unfold_grid_bwd(dout, h, w, d, k)
    t0 = time.perf_counter()
    for _ in range(repeat):
        kernels.unfold_grid(grid, k)
    fwd = (time.perf_counter() - t0) / repeat
    t0 = time.perf_counter()
    for _ in range(repeat):
        kernels.unfold_grid_bwd(dout, h, w, d, k)
    bwd = (time.perf_counter() - t0) / repeat
    rows.append({"case": f"{h}x{w}x{d} k={k}", "fwd_us": fwd * 1e6, "bwd_us": bwd * 1e6})
print(json.dumps({"numba": kernels.USE_NUMBA, "rows": rows}))
'''


def run_path(no_numba, repeat):
    env = dict(os.environ)
    env["HMN_NO_NUMBA"] = "1" if no_numba else "0"
    out = subprocess.run([sys.executable, "-c", WORKER, str(repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    jit = run_path(False, args.repeat)
    plain = run_path(True, args.repeat)
    if not jit["numba"]:
        print("numba unavailable; both columns use the numpy fallback")
    print(f"{'case':>18} | {'jit fwd':>9} {'numpy fwd':>9} | {'jit bwd':>9} {'numpy bwd':>9} | speedup f/b")
    for a, b in zip(jit["rows"], plain["rows"]):
        sf = b["fwd_us"] / a["fwd_us"]
        sb = b["bwd_us"] / a["bwd_us"]
        print(f"{a['case']:>18} | {a['fwd_us']:>7.0f}us {b['fwd_us']:>7.0f}us "
              f"| {a['bwd_us']:>7.0f}us {b['bwd_us']:>7.0f}us | {sf:4.1f}x/{sb:4.1f}x")


if __name__ == "__main__":
    main()
