"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--size 128] [--repeat 5] [--threads 1]

Prints one row per kernel with the best-of-N wall time for each backend and
the speedup, and checks the two backends agree on every run.
"""

import argparse
import sys
import timeit

import numpy as np

from memc import _pykernels as py

try:
    from memc import _ckernels as ck
except ImportError:
    ck = None


def _cases(size, K, threads, rng):
    image = rng.random((1, 3, size, size))
    flow = rng.uniform(-4, 4, size=(1, 2, size, size))
    kern = rng.normal(size=(1, K * K, size, size))
    grad = rng.normal(size=image.shape)
    projected, count, targets = py.project_scatter(flow)
    holes = count == 0
    return [
        ("warp_forward",
         lambda: py.warp_forward(image, flow, kern, K, True),
         lambda: ck.warp_forward(image, flow, kern, K, True, threads)),
        ("warp_backward",
         lambda: py.warp_backward(image, flow, kern, grad, K, True),
         lambda: ck.warp_backward(image, flow, kern, grad, K, True)),
        ("local_filter",
         lambda: py.warp_forward(image, flow, kern, K, False),
         lambda: ck.warp_forward(image, flow, kern, K, False, threads)),
        ("project_scatter",
         lambda: py.project_scatter(flow),
         lambda: ck.project_scatter(flow)),
        ("fill_holes",
         lambda: py.fill_holes(projected, holes),
         lambda: ck.fill_holes(projected, holes.astype(np.uint8), threads)),
        ("project_backward",
         lambda: py.project_backward(targets, count, flow),
         lambda: ck.project_backward(targets, count, flow)),
    ]


def _agree(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, rtol=0, atol=1e-12) for x, y in zip(a, b))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=128)
    parser.add_argument("--K", type=int, default=4)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)
    if ck is None:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1

    rng = np.random.default_rng(0)
    print(f"{args.size}x{args.size}, K={args.K}, threads={args.threads}, "
          f"best of {args.repeat}")
    print(f"{'kernel':<18}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for name, f_py, f_c in _cases(args.size, args.K, args.threads, rng):
        if not _agree(f_py(), f_c()):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        t_py = min(timeit.repeat(f_py, number=1, repeat=args.repeat)) * 1e3
        t_c = min(timeit.repeat(f_c, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18}{t_py:>12.2f}{t_c:>14.2f}{t_py / t_c:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
