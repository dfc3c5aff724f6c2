"""Time the compiled kernels against the numpy fallback on network-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--number 20]

Prints one line per kernel with the best time per call for each backend.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from scatterkit import kernels


def cases(rng):
    x = rng.normal(size=(32, 16, 32, 32)).astype(np.float32)
    cols = kernels.load_backend("python").im2col(x, 3, 3, 1, 1)
    pooled, argmax = kernels.load_backend("python").maxpool_forward(x, 2, 2)
    pts = rng.normal(size=(200, 6))
    cents = rng.normal(size=(4, 6))
    return {
        "im2col 32x16x32x32 k3": lambda b: b.im2col(x, 3, 3, 1, 1),
        "col2im 32x16x32x32 k3": lambda b: b.col2im(cols, 32, 16, 32, 32, 3, 3, 1, 1),
        "maxpool_forward 2x2": lambda b: b.maxpool_forward(x, 2, 2),
        "maxpool_backward 2x2": lambda b: b.maxpool_backward(pooled, argmax, 32, 32, 2, 2),
        "masked_mean rho=0.05": lambda b: b.masked_mean(x, 0.05),
        "nearest_center 200x4": lambda b: b.nearest_center(pts, cents),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    args = ap.parse_args(argv)

    backends = {name: kernels.load_backend(name) for name in kernels.available_backends()}
    if "compiled" not in backends:
        print("compiled extension not built; timing the python backend only")
    print(f"{'kernel':<26}" + "".join(f"{n:>14}" for n in backends) + "   speedup")
    for label, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for name, mod in backends.items():
            t = timeit.repeat(lambda: fn(mod), repeat=args.repeat, number=args.number)
            times[name] = min(t) / args.number
        cells = "".join(f"{1e3 * times[n]:>11.3f} ms" for n in backends)
        speed = f"{times['python'] / times['compiled']:8.2f}x" if "compiled" in times else ""
        print(f"{label:<26}{cells}{speed}")


if __name__ == "__main__":
    main()
