"""Compare the compiled and pure-Python theta-scheme kernels.

Usage::

    python benchmarks/bench_kernels.py [--nodes 201 401 1601] [--steps 1000] [--columns 1 16]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from heatobs import backend, build_mesh
from heatobs.heat import _implicit_blocks


def case(nodes: int, steps: int, columns: int):
    mesh = build_mesh(1, nodes)
    lo, di, up = _implicit_blocks(mesh)
    pot = np.zeros((1, nodes))
    dts = np.full(steps, 0.5 / steps)
    u0 = np.ascontiguousarray(np.cos(np.pi * mesh.x)[:, None] * np.ones((1, columns)))
    store = np.zeros(steps + 1, dtype=np.uint8)
    store[[0, -1]] = 1
    return lo, di, up, pot, dts, 0.5, u0, store


def bench(which: str, args, repeat: int) -> tuple[float, np.ndarray]:
    backend.set_backend(which)
    out = backend.theta_march(*args)
    best = min(timeit.repeat(lambda: backend.theta_march(*args), number=1, repeat=repeat))
    return best, out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, nargs="+", default=[201, 401, 1601])
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--columns", type=int, nargs="+", default=[1, 16])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not backend.compiled_available():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    print(f"{'nodes':>6} {'cols':>5} {'compiled [s]':>13} {'python [s]':>11} {'speedup':>8} {'max diff':>10}")
    for n in args.nodes:
        for c in args.columns:
            a = case(n, args.steps, c)
            tc, oc = bench("compiled", a, args.repeat)
            tp, op = bench("python", a, args.repeat)
            diff = float(np.max(np.abs(oc - op)))
            print(f"{n:6d} {c:5d} {tc:13.4f} {tp:11.4f} {tp / tc:8.1f} {diff:10.2e}")
    backend.set_backend("compiled")


if __name__ == "__main__":
    main()
