"""Time the numba kernels against the pure-numpy fallbacks on the same inputs.

    python3 benchmarks/bench_kernels.py [--grid 10x10] [--repeat 3]

Each kernel pair is run once to warm up (JIT compile for numba) and then
timed ``--repeat`` times; the best time is reported. Outputs of the two
paths are compared before timing.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from ttvaccess import _kernels
from ttvaccess.gtfs import build_network
from ttvaccess.router import QueryConfig, Router
from ttvaccess.spatial import _centered, knn_weights
from ttvaccess.synth import SERVICE_DATE, generate_synthetic_city


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def raptor_case(rows, cols):
    city = generate_synthetic_city(rows, cols, seed=7)
    net = build_network(city.feed, SERVICE_DATE)
    routers = {name: Router(net, None, QueryConfig(), kernel=k)
               for name, k in (("numba", _kernels.raptor_numba), ("numpy", _kernels.raptor_numpy))}
    origins = range(net.n_stops)

    def run(name):
        r = routers[name]
        return lambda: [r.stop_arrivals(o, 9 * 3600 + 60 * (o % 10)) for o in origins]

    a, b = run("numba")(), run("numpy")()
    assert all(np.array_equal(x[0], y[0]) and np.array_equal(x[1], y[1]) for x, y in zip(a, b))
    return f"raptor: {net.n_stops} origins, {len(net.patterns)} patterns", run("numba"), run("numpy")


def knn_case(n, k=10):
    rng = np.random.default_rng(0)
    lat, lon = rng.uniform(50, 55, n), rng.uniform(-5, 1, n)
    assert np.array_equal(_kernels.knn_numba(lat, lon, k), _kernels.knn_numpy(lat, lon, k))
    return (f"knn: n={n}, k={k}", lambda: _kernels.knn_numba(lat, lon, k),
            lambda: _kernels.knn_numpy(lat, lon, k))


def moran_cases(n, n_perm=999, k=10):
    rng = np.random.default_rng(1)
    lat, lon = rng.uniform(50, 55, n), rng.uniform(-5, 1, n)
    w = knn_weights(lat, lon, k)
    _, z, m2 = _centered(rng.normal(size=n))
    perms = np.stack([rng.permutation(n) for _ in range(n_perm)])
    scale = n / (m2 * w.s0)
    g = (f"global Moran perms: n={n}, R={n_perm}",
         lambda: _kernels.global_moran_perm_numba(z, w.neighbors, w.weights, perms, scale),
         lambda: _kernels.global_moran_perm_numpy(z, w.neighbors, w.weights, perms, scale))
    u = rng.random((n_perm, k))
    s2 = m2 / n

    def local(fn):
        return lambda: [fn(i, z, w.neighbors[i], w.weights[i], u, 1.0 / s2) for i in range(0, n, 10)]

    a, b = local(_kernels.local_moran_perm_numba)(), local(_kernels.local_moran_perm_numpy)()
    assert all(np.allclose(x, y, rtol=1e-12) for x, y in zip(a, b))
    lo = (f"local Moran perms: {len(range(0, n, 10))} units, R={n_perm}",
          local(_kernels.local_moran_perm_numba), local(_kernels.local_moran_perm_numpy))
    return [g, lo]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--grid", default="10x10")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--n", type=int, default=2000, help="units for the spatial kernels")
    args = p.parse_args(argv)
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rows, cols = (int(v) for v in args.grid.lower().split("x"))
    cases = [raptor_case(rows, cols), knn_case(args.n), *moran_cases(args.n)]
    print(f"{'kernel':<44} {'numba s':>9} {'numpy s':>9} {'speedup':>8}")
    for label, fast, slow in cases:
        a, b = best_of(fast, args.repeat), best_of(slow, args.repeat)
        print(f"{label:<44} {a:9.4f} {b:9.4f} {b / a:7.1f}x")


if __name__ == "__main__":
    main()
