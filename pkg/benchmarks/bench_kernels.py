#!/usr/bin/env python3
"""Time the numba kernels against their numpy twins, then a full attack run
under each backend (the backend is fixed at import, so those run in
subprocesses with BBUAP_DISABLE_NUMBA toggled).

    python3 benchmarks/bench_kernels.py [--repeat 5] [--skip-attack]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from bbuap import kernels
from bbuap._accel import USE_NUMBA

ATTACK_SNIPPET = """
import json, time
from bbuap import BACKEND
from bbuap.attack import AttackConfig, run_attack
from bbuap.tensor import xi_from_zeta
from bbuap.toy import make_preset
tp = make_preset("binary", seed=0)
X = tp.images[:40]
cfg = AttackConfig(xi=xi_from_zeta(0.1, X, 2), directions="dct", seed=0, max_iterations=2000)
run_attack(tp.oracle, X, AttackConfig(xi=cfg.xi, max_iterations=2))  # warm up the jit
t = time.perf_counter()
rep = run_attack(tp.oracle, X, cfg)
print(json.dumps({"backend": BACKEND, "seconds": time.perf_counter() - t,
                  "objective": rep.objective, "accepted": rep.accepted}))
"""


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_cases():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(299 * 299 * 3)
    radius = 0.1 * np.abs(v).sum()
    x = rng.random((64, 32 * 32 * 3))
    w = rng.standard_normal((10, 32 * 32 * 3))
    b = rng.standard_normal(10)
    return [
        ("project_l1 (268k)", lambda: kernels.project_l1_numba(v, radius),
         lambda: kernels.project_l1_numpy(v, radius), 5),
        ("dct_plane 299x299", lambda: kernels.dct_plane_numba(299, 299, 17, 5),
         lambda: kernels.dct_plane_numpy(299, 299, 17, 5), 50),
        ("affine_rows 64x3072x10", lambda: kernels.affine_rows_numba(x, w, b),
         lambda: kernels.affine_rows_numpy(x, w, b), 50),
    ]


def run_attack_bench():
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, BBUAP_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", ATTACK_SNIPPET], env=env,
                             capture_output=True, text=True, check=True)
        row = json.loads(res.stdout.strip().splitlines()[-1])
        out[row["backend"]] = row
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-attack", action="store_true")
    args = ap.parse_args()

    if not USE_NUMBA:
        print("numba disabled in this process; kernel timings compare numpy with plain Python loops")
    print(f"{'kernel':<26}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, fast, ref, number in kernel_cases():
        fast()  # compile
        t_fast = best_of(fast, args.repeat, number)
        t_ref = best_of(ref, args.repeat, number)
        print(f"{name:<26}{t_fast * 1e3:>12.3f}{t_ref * 1e3:>12.3f}{t_ref / t_fast:>10.2f}")

    if not args.skip_attack:
        res = run_attack_bench()
        nb, npy = res["numba"], res["numpy"]
        same = nb["objective"] == npy["objective"] and nb["accepted"] == npy["accepted"]
        print(f"\nattack, 2000 DCT iterations on 40 images: numba {nb['seconds']:.2f}s, "
              f"numpy {npy['seconds']:.2f}s, same result: {same}")


if __name__ == "__main__":
    main()
