"""Time the numba and numpy versions of each hot kernel.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both flavours are called directly, so one run compares them side by side.
With ``MMDGM_DISABLE_NUMBA=1`` (or numba missing) the ``*_nb`` functions run
as plain Python loops; the sizes below are then reduced to keep the run short.
"""
import argparse
import time

import numpy as np

from mmdgm import kernels
from mmdgm._accel import USE_NUMBA, backend_name

KEY = np.uint64(0x1234_5678_9ABC_DEF0)


def best_of(fn, repeat):
    fn()  # warm-up (triggers JIT compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(scale):
    n = 2_000_000 // scale
    rng_feats = kernels.normal_np(KEY, np.uint64(0), 1000 * 16).reshape(1000, 16)
    labels = (kernels.uniform_np(KEY, np.uint64(10**7), 1000) * 10).astype(np.int64)
    iters = 20_000 // scale
    return [
        (f"uniform n={n}", lambda f: f(KEY, np.uint64(0), n), kernels.uniform_nb, kernels.uniform_np),
        (f"normal n={n}", lambda f: f(KEY, np.uint64(0), n), kernels.normal_nb, kernels.normal_np),
        (f"pegasos 1000x16 M=10 iters={iters} batch=100",
         lambda f: f(rng_feats, labels, 10, 1e-4, iters, 100, KEY), kernels.pegasos_nb, kernels.pegasos_np),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    scale = 1 if USE_NUMBA else 50
    print(f"active backend: {backend_name()} (numba JIT {'on' if USE_NUMBA else 'off'})")
    loop_label = "numba [s]" if USE_NUMBA else "py-loop [s]"
    print(f"{'kernel':<46}{loop_label:>12}{'numpy [s]':>12}{'speed-up':>10}")
    for name, call, nb, np_fn in cases(scale):
        with np.errstate(over="ignore"):  # uint64 wrap-around is intended in the interpreted hash
            t_nb = best_of(lambda: call(nb), args.repeat)
        t_np = best_of(lambda: call(np_fn), args.repeat)
        print(f"{name:<46}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>10.2f}x")


if __name__ == "__main__":
    main()
