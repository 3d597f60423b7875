"""Compare the numba kernels with the pure-numpy fallback.

The backend is fixed when ``pfhom`` is imported, so each backend runs in its
own interpreter. Usage::

    python3 benchmarks/bench_backends.py [--paths 2000] [--repeat 3]

Reported per backend: one polynomial+Jacobian evaluation and one LU solve on
the reduced 10-bus system, the 64-path 3-bus first stage, and a sample of
10-bus total-degree paths (per-path time). Numba compile time is excluded by
a warm-up call.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import textwrap

WORKER = textwrap.dedent("""
    import json, sys, time
    import numpy as np
    import pfhom
    from pfhom import kernels
    from pfhom.netmodel import load_fixture
    from pfhom.paramhom import reduced_system, solve_generic
    from pfhom.polysys import instantiate, polynomialize
    from pfhom.tracker import total_degree_homotopy, track_paths

    n_paths, repeat = int(sys.argv[1]), int(sys.argv[2])

    def best(fn, k):
        fn()
        out = []
        for _ in range(repeat):
            t = time.perf_counter()
            for _ in range(k):
                fn()
            out.append((time.perf_counter() - t) / k)
        return min(out)

    ten = polynomialize(load_fixture("ten_bus"))
    red, _ = reduced_system(ten)
    target = instantiate(red, [0.3 + 0.5j, -0.2 + 0.7j])
    hom, points = total_degree_homotopy(target, 0)
    x = points[12345]
    zero = np.zeros_like(hom.c_target)
    ev = lambda: kernels.eval2(x, hom.slots, hom.eq, hom.c_target, zero, hom.n_vars)
    jac = ev()[2]
    lu = lambda: kernels.lu_solve(jac, x)

    three = polynomialize(load_fixture("three_bus"))
    stage1 = lambda: solve_generic(three, seed=42)

    idx = np.sort(np.random.default_rng(0).choice(len(points), n_paths, replace=False))
    starts = points.take(idx)
    track_paths(hom, starts[:2])
    t = time.perf_counter()
    track_paths(hom, starts)
    per_path = (time.perf_counter() - t) / n_paths

    print(json.dumps({
        "backend": pfhom.BACKEND,
        "eval_us": best(ev, 200) * 1e6,
        "lu_us": best(lu, 200) * 1e6,
        "three_bus_stage1_s": best(stage1, 1),
        "ten_bus_ms_per_path": per_path * 1e3,
    }))
""")


def run(backend: str, n_paths: int, repeat: int) -> dict:
    env = dict(os.environ)
    env["PFHOM_DISABLE_NUMBA"] = "1" if backend == "numpy" else "0"
    out = subprocess.run([sys.executable, "-c", WORKER, str(n_paths), str(repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=2000, help="10-bus paths for numba")
    ap.add_argument("--numpy-paths", type=int, default=50, help="10-bus paths for numpy")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    rows = [run("numba", args.paths, args.repeat), run("numpy", args.numpy_paths, args.repeat)]
    keys = ["eval_us", "lu_us", "three_bus_stage1_s", "ten_bus_ms_per_path"]
    print(f"{'metric':<22}" + "".join(f"{r['backend']:>14}" for r in rows) + f"{'speedup':>10}")
    for k in keys:
        a, b = rows[0][k], rows[1][k]
        print(f"{k:<22}{a:>14.4g}{b:>14.4g}{b / a:>10.1f}")


if __name__ == "__main__":
    main()
