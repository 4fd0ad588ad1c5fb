"""Backend comparison: jitted kernels vs their plain numpy twins.

Micro section times each kernel pair in-process (both twins are importable
when numba is available). The end-to-end section re-runs a small training
job in two subprocesses, one with CYCLEREG_NO_NUMBA=1, because the backend
is fixed at import time.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --rows 4000 --repeats 9
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from cyclereg import kernels as K


def timeit(fn, repeats):
    best = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best.append(time.perf_counter() - t0)
    return np.median(best) * 1e3


def micro(rows, width, repeats):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(rows, width))
    g = rng.normal(size=(rows, width))
    gamma = rng.random(width) + 0.5
    beta = rng.normal(size=width)
    eps = 1e-5
    y = np.tanh(x)
    _, xhat, _, var = K.bn_fwd_train_np(x, gamma, beta, eps)
    p = rng.normal(size=rows * width)
    g1 = rng.normal(size=rows * width)
    m = np.zeros_like(p)
    v = np.zeros_like(p)

    cases = [
        ("tanh_fwd", lambda f: lambda: f(x)),
        ("tanh_bwd", lambda f: lambda: f(g, y)),
        ("relu_fwd", lambda f: lambda: f(x)),
        ("bn_fwd_train", lambda f: lambda: f(x, gamma, beta, eps)),
        ("bn_bwd", lambda f: lambda: f(g, xhat, var, gamma, eps)),
        ("penalty_fwd[l2]", lambda f: lambda: f(x, K.PENALTY_L2, 1.0)),
        ("penalty_fwd[smooth_l1]",
         lambda f: lambda: f(x, K.PENALTY_SMOOTH_L1, 1.0)),
        ("sumsq", lambda f: lambda: f(p)),
        ("adam_step", lambda f: lambda: f(p, g1, m, v, 1e-3, 0.9, 0.999,
                                          1e-8, 0.1, 1e-3)),
    ]

    print(f"\nmicro kernels on ({rows}, {width}) float64, median of {repeats}")
    print(f"{'kernel':<24}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, make in cases:
        base = name.split("[")[0]
        np_fn = getattr(K, f"{base}_np")
        wrapped = name if "[" not in name else base
        t_np = timeit(make(np_fn), repeats)
        if K.HAVE_NUMBA:
            nb_fn = getattr(K, f"{base}_nb")
            make(nb_fn)()  # absorb compile time before timing
            t_nb = timeit(make(nb_fn), repeats)
            print(f"{name:<24}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.1f}x")
        else:
            print(f"{name:<24}{t_np:>10.3f}{'-':>10}{'-':>9}")


TRAIN_SNIPPET = """
import time
from cyclereg import kernels
from cyclereg.evaluation import run_single
from cyclereg.training import TrainingPlan

# warmup absorbs jit cache loading so the timing is steady-state
run_single("x_squared", 100, TrainingPlan(strategy="ucm", epochs=2,
                                          batch_fraction=0.25), hidden=(64, 64))
plan = TrainingPlan(strategy="ucm", epochs=30, batch_fraction=0.1)
t0 = time.perf_counter()
out = run_single("x_squared", 1000, plan, hidden=(64, 64))
dt = time.perf_counter() - t0
print(f"{kernels.BACKEND} {dt:.3f}s backward_error={out.report.backward_error:.6f}")
"""


def end_to_end():
    print("\nend-to-end: ucm, 30 epochs, n=1000, hidden (64, 64)")
    for flag in ("0", "1"):
        env = dict(os.environ, CYCLEREG_NO_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env,
                             capture_output=True, text=True)
        line = out.stdout.strip() or out.stderr.strip().splitlines()[-1]
        print(f"  {line}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--rows", type=int, default=1600)
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args()
    print(f"active backend: {K.BACKEND}")
    micro(args.rows, args.width, args.repeats)
    if not args.skip_end_to_end:
        end_to_end()


if __name__ == "__main__":
    main()
