"""Compare the compiled and numpy pixel kernels.

    python3 benchmarks/bench_kernels.py [--size 512] [--repeat 5]

Prints the best-of-N wall time per kernel and backend, plus the speedup,
and checks that both backends agree bit for bit.
"""
import argparse
import math
import timeit

import numpy as np

from retina_pipeline import kernels
from retina_pipeline.imageops import gaussian_kernel


def cases(size, rng):
    img = rng.integers(0, 256, (size, size, 3)).astype(np.float64)
    k = gaussian_kernel(size / 30)
    grid = (np.arange(size) + 0.5) * (1.37) - 0.5
    ys, xs = np.meshgrid(grid, grid, indexing="ij")
    theta = math.radians(33)
    c = (size - 1) / 2
    rr, qq = np.meshgrid(np.arange(size) - c, np.arange(size) - c, indexing="ij")
    return {
        "separable_blur": lambda be: be.separable_blur(img, k),
        "bilinear_resize": lambda be: be.bilinear_sample(img, ys, xs, False),
        "bilinear_rotate": lambda be: be.bilinear_sample(
            img, c + math.cos(theta) * rr + math.sin(theta) * qq, c + math.cos(theta) * qq - math.sin(theta) * rr, True
        ),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = {name: kernels.load_backend(name) for name in kernels.available_backends()}
    if "cython" not in backends:
        print("compiled extension not built; only the numpy backend is available")
    print(f"image {args.size}x{args.size}x3, best of {args.repeat}")
    print(f"{'kernel':<18}" + "".join(f"{n:>12}" for n in backends) + f"{'speedup':>10}{'identical':>11}")
    for name, fn in cases(args.size, np.random.default_rng(0)).items():
        times = {b: min(timeit.repeat(lambda: fn(be), number=1, repeat=args.repeat)) for b, be in backends.items()}
        outs = [fn(be) for be in backends.values()]
        same = all(np.array_equal(outs[0], o) for o in outs[1:])
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        row = "".join(f"{times[b] * 1000:>10.1f}ms" for b in backends)
        print(f"{name:<18}{row}{speed:>9.1f}x{str(same):>11}")


if __name__ == "__main__":
    main()
