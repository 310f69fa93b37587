"""Compare the compiled and pure-Python kernels on random fields.

    python benchmarks/bench_kernels.py [n] [repeats]
"""

import sys
import timeit

import numpy as np

from lowenv import _pykernels
from lowenv.fem2d import build_mesh

try:
    from lowenv import _ckernels
except ImportError:
    _ckernels = None


def cases(n, seed=0):
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal((3, n + 1, n + 1)).cumsum(axis=1) / n
    phi[0] = 0.0
    vx, vy = rng.uniform(-1, 1, (2, n + 1, n + 1))
    h = 1.0 / n
    dts = [0.5 * h / np.max(np.abs(vx) + np.abs(vy))] * 10
    mesh = build_mesh(n)
    nodal = phi.reshape(3, -1)
    return {
        "upwind_advect x10": lambda k: k.upwind_advect(phi[1], vx, vy, h, dts),
        "cut_fractions": lambda k: k.cut_fractions(nodal, mesh.tri, mesh.nodes),
    }


def main(argv):
    n = int(argv[1]) if len(argv) > 1 else 64
    repeats = int(argv[2]) if len(argv) > 2 else 3
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"n={n}, best of {repeats}")
    for name, fn in cases(n).items():
        times = {}
        for bname, mod in backends:
            times[bname] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=repeats))
        row = "  ".join(f"{b}={t * 1e3:9.2f} ms" for b, t in times.items())
        if len(times) == 2:
            row += f"  speedup={times['python'] / times['cython']:.1f}x"
            a, b = fn(_pykernels), fn(_ckernels)
            row += "  identical" if np.array_equal(a, b) else f"  max|diff|={np.max(np.abs(a - b)):.2e}"
        print(f"{name:20s} {row}")


if __name__ == "__main__":
    main(sys.argv)
