"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--batch 16] [--side 64]

Each kernel is run on identical inputs under both backends; the script also
checks that the two outputs agree exactly and prints a speedup column.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from drkit.kernels import _pykernels

try:
    from drkit.kernels import _ckernels
except ImportError:
    _ckernels = None


def cases(batch, side, rng):
    x = rng.normal(size=(batch, 16, side, side))
    cols = _pykernels.im2col(x, 3, 3, 1, 1)
    pooled, argmax = _pykernels.maxpool2d_forward(x, 2)
    img = rng.uniform(size=(3, side * 8, side * 8))
    ys = rng.uniform(-2, img.shape[1] + 1, size=(side * 8, side * 8))
    xs = rng.uniform(-2, img.shape[2] + 1, size=(side * 8, side * 8))
    g = rng.normal(size=pooled.shape)
    return {
        "im2col": lambda k: k.im2col(x, 3, 3, 1, 1),
        "col2im": lambda k: k.col2im(cols, x.shape, 3, 3, 1, 1),
        "maxpool2d_forward": lambda k: k.maxpool2d_forward(x, 2),
        "maxpool2d_backward": lambda k: k.maxpool2d_backward(g, argmax, x.shape),
        "bilinear_sample": lambda k: k.bilinear_sample(img, ys, xs, 0.0),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(p, q) for p, q in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--side", type=int, default=64)
    ap.add_argument("--json", action="store_true", help="print rows as JSON")
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first", file=sys.stderr)
        return 1

    rows = []
    for name, fn in cases(args.batch, args.side, np.random.default_rng(0)).items():
        py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat))
        cy = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat))
        rows.append({"kernel": name, "numpy_ms": 1e3 * py, "cython_ms": 1e3 * cy, "speedup": py / cy,
                     "identical": bool(_same(fn(_pykernels), fn(_ckernels)))})

    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        print(f"{'kernel':<20}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}  identical")
        for r in rows:
            print(f"{r['kernel']:<20}{r['numpy_ms']:>10.3f}{r['cython_ms']:>11.3f}{r['speedup']:>8.2f}x  {r['identical']}")
    return 0 if all(r["identical"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
