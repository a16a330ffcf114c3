"""Compare the compiled and numpy kernel backends.

Run: ``python3 benchmarks/bench_kernels.py [--repeat N]``. Prints the median
wall time per call for each kernel and backend, and the speedup.
"""
import argparse
import statistics
import time

import numpy as np

from sdtl.kernels import available_backends, get_backend


def _time(fn, repeat):
    fn()  # warm-up
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def cases(rng):
    x = rng.standard_normal((4, 32, 66, 66)).astype(np.float32)
    cols = rng.standard_normal((4, 32 * 9, 64 * 64)).astype(np.float32)
    img = rng.standard_normal((96, 128, 128)).astype(np.float32)
    bands = rng.standard_normal((4, 96, 64, 64)).astype(np.float32)
    return {
        "im2col 4x32x66x66 k3": lambda k: k.im2col(x, 3, 1),
        "im2col stride2 k3": lambda k: k.im2col(x, 3, 2),
        "col2im 4x288x4096": lambda k: k.col2im(cols, 32, 66, 66, 3, 1),
        "haar_analysis 96x128x128": lambda k: k.haar_analysis(img),
        "haar_synthesis 96x64x64": lambda k: k.haar_synthesis(bands),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    backends = available_backends()
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s}" + "".join(f"{b:>12s}" for b in backends) + "   speedup")
    for name, fn in cases(rng).items():
        times = {b: _time(lambda: fn(get_backend(b)), args.repeat) for b in backends}
        line = f"{name:28s}" + "".join(f"{times[b] * 1e3:10.3f}ms" for b in backends)
        if "cython" in times:
            line += f"   {times['python'] / times['cython']:6.2f}x"
        print(line)


if __name__ == "__main__":
    main()
