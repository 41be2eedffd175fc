"""Compare the compiled and pure-Python kernel backends.

Each backend runs in its own interpreter (the backend is chosen at import)
on the same capsule template and seeded queries::

    python benchmarks/bench_kernels.py [--resolution 64] [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from lesionflow import kernels
from lesionflow.geodesic import geodesic_matrix, steiner_graph, trace
from lesionflow.spatial import closest_points
from lesionflow.templates import make_template

res, repeat, n = int(sys.argv[1]), int(sys.argv[2]), int(sys.argv[3])
T = make_template("capsule", res)
rng = np.random.default_rng(0)
tri = rng.integers(T.n_triangles, size=n)
bary = rng.dirichlet(np.ones(3), size=n)
pts = T.embed_many(tri, bary) + rng.normal(scale=2.0, size=(n, 3))
vec = rng.normal(size=(n, 3)) * 20.0
steiner_graph(T)
k = min(n, 60)

def best(fn):
    out = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t)
    return min(out)

timings = {
    "closest_points": best(lambda: closest_points(T, pts)),
    "trace": best(lambda: trace(T, tri, bary, vec)),
    "geodesic_matrix": best(lambda: geodesic_matrix(T, tri[:k], bary[:k], tri[-k:], bary[-k:])),
}
checks = {
    "closest_tri": closest_points(T, pts)[0][:50].tolist(),
    "geodesic": np.round(geodesic_matrix(T, tri[:5], bary[:5], tri[-5:], bary[-5:]), 9).ravel().tolist(),
}
print(json.dumps({"backend": kernels.BACKEND, "vertices": T.n_vertices, "timings": timings, "checks": checks}))
"""


def run(pure, args):
    env = dict(os.environ, LESIONFLOW_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", WORKER, str(args.resolution), str(args.repeat), str(args.queries)],
                         env=env, check=True, capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--resolution", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--queries", type=int, default=2000)
    args = ap.parse_args(argv)
    fast, slow = run(False, args), run(True, args)
    if fast["backend"] != "compiled":
        print("compiled backend not built; run `pip install -e . --no-build-isolation` first")
    print(f"capsule template, {fast['vertices']} vertices, {args.queries} queries, best of {args.repeat}")
    print(f"{'kernel':<18}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}")
    for name in fast["timings"]:
        a, b = fast["timings"][name], slow["timings"][name]
        print(f"{name:<18}{a:>11.3f}s{b:>11.3f}s{b / a:>9.1f}x")
    print("results identical:", fast["checks"] == slow["checks"])


if __name__ == "__main__":
    main()
