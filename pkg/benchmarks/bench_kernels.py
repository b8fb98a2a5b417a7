"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 20] [--size 64]

Prints one line per kernel with the best-of-N time for each backend and
the speedup. Run with numba installed; the first call per kernel compiles
(or loads the on-disk cache) and is excluded from timing.
"""

import argparse
import timeit

import numpy as np

from adasr import _kernels as K


def cases(size, bands, r):
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(size, size, bands))
    kern = rng.uniform(size=(r, r))
    gout_rot = rng.normal(size=img.shape)
    gout_conv = rng.normal(size=(size // r, size // r, bands))
    return {
        "rotate_forward": (img, 0.3),
        "rotate_backward": (img, 0.3, gout_rot, True),
        "stride_conv_forward": (img, kern),
        "stride_conv_backward": (img, kern, gout_conv, True),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--bands", type=int, default=31)
    p.add_argument("--scale", type=int, default=4)
    args = p.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    print(f"{'kernel':24s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, call_args in cases(args.size, args.bands, args.scale).items():
        fn_np, fn_nb = K.NUMPY_KERNELS[name], K.NUMBA_KERNELS[name]
        fn_nb(*call_args)  # compile / warm cache
        t_np = min(timeit.repeat(lambda: fn_np(*call_args), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: fn_nb(*call_args), number=1, repeat=args.repeat))
        print(f"{name:24s} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
