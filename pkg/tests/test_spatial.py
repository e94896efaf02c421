import math

import numpy as np
import pytest
from scipy import stats

from ttvaccess import _kernels
from ttvaccess.errors import UndefinedStatisticError
from ttvaccess.spatial import (
    MetricVector,
    SpatialWeights,
    fdr_adjust,
    knn_weights,
    local_morans_i,
    morans_i,
    pearson,
    pearson_pvalue,
    permutation_test_global,
    permutation_test_local,
)

from conftest import kernels
from oracles import fdr_brute, knn_brute, moran_double_loop


def grid(rows=10, cols=10, spacing_deg=0.01, lat0=52.0):
    lat = np.repeat(lat0 + spacing_deg * np.arange(rows), cols)
    lon = np.tile(spacing_deg / math.cos(math.radians(lat0)) * np.arange(cols), rows)
    return lat, lon


def ring4():
    nb = np.array([[1, 3], [0, 2], [1, 3], [2, 0]])
    return SpatialWeights(nb, np.ones((4, 2)))


def random_weights(rng, n, k):
    nb = np.array([rng.choice(np.delete(np.arange(n), i), size=k, replace=False) for i in range(n)])
    return SpatialWeights(nb, rng.uniform(0.1, 2.0, size=(n, k)))


def test_knn_collinear_ties(backend):
    lat = np.array([0.0, 0.5, 1.0, 1.5])
    lon = np.zeros(4)
    w = knn_weights(lat, lon, k=1, kernel=kernels(backend)["knn"])
    assert w.neighbors[:, 0].tolist() == [1, 0, 1, 2]


def test_knn_complete_graph(backend):
    rng = np.random.default_rng(0)
    lat, lon = rng.uniform(50, 51, 7), rng.uniform(-1, 0, 7)
    w = knn_weights(lat, lon, k=6, kernel=kernels(backend)["knn"])
    for i in range(7):
        assert sorted(w.neighbors[i]) == [j for j in range(7) if j != i]


@pytest.mark.parametrize("seed", range(3))
def test_knn_matches_sort(backend, seed):
    rng = np.random.default_rng(seed)
    lat, lon = rng.uniform(50, 52, 100), rng.uniform(-2, 0, 100)
    w = knn_weights(lat, lon, k=10, kernel=kernels(backend)["knn"])
    assert w.neighbors.tolist() == knn_brute(list(zip(lat, lon)), 10)


def test_knn_errors_and_standardize():
    lat, lon = grid(3, 3)
    with pytest.raises(ValueError):
        knn_weights(lat, lon, k=9)
    w = knn_weights(lat, lon, k=4, row_standardize=True)
    assert np.allclose(w.weights.sum(axis=1), 1.0) and w.transform == "R"


def test_moran_ring_minus_one():
    assert morans_i([1.0, -1.0, 1.0, -1.0], ring4()) == -1.0


def test_moran_constant_raises():
    with pytest.raises(UndefinedStatisticError):
        morans_i([2.0, 2.0, 2.0, 2.0], ring4())
    with pytest.raises(UndefinedStatisticError):
        local_morans_i(MetricVector(np.ones(4)), ring4())


def test_moran_matches_double_loop():
    rng = np.random.default_rng(5)
    for _ in range(30):
        n = int(rng.integers(5, 40))
        w = random_weights(rng, n, int(rng.integers(1, n)))
        x = rng.normal(size=n) * rng.uniform(0.1, 100)
        assert abs(morans_i(x, w) - moran_double_loop(x, w.dense())) <= 1e-12


def test_local_identity_and_zero():
    rng = np.random.default_rng(6)
    for _ in range(30):
        n = int(rng.integers(5, 60))
        w = random_weights(rng, n, int(rng.integers(1, min(n, 12))))
        x = rng.lognormal(size=n)
        li = local_morans_i(x, w)
        assert li.sum() == pytest.approx(morans_i(x, w) * w.s0, rel=1e-9)
    x = np.array([1.0, 2.0, 3.0, 6.0])  # mean is 3, so unit 2 sits at the mean
    assert local_morans_i(x, ring4())[2] == 0.0


def test_local_hl_sign():
    lat, lon = grid(3, 3)
    x = np.zeros(9)
    x[4] = 10.0
    w = knn_weights(lat, lon, k=8)
    assert local_morans_i(x, w)[4] < 0


def test_global_clustered_floor_and_determinism(backend):
    lat, lon = grid()
    x = np.repeat(np.arange(10.0), 10)  # smooth north-south gradient
    w = knn_weights(lat, lon, k=8)
    res = permutation_test_global(x, w, n_perm=999, seed=3, kernel=kernels(backend)["global_perm"])
    assert res.p_value == 0.001 and res.z_score > 5
    assert res == permutation_test_global(x, w, n_perm=999, seed=3, kernel=kernels(backend)["global_perm"])


def test_global_backends_agree():
    rng = np.random.default_rng(9)
    lat, lon = grid()
    w = knn_weights(lat, lon, k=6)
    x = rng.normal(size=100)
    a = permutation_test_global(x, w, seed=1, kernel=_kernels.global_moran_perm_numba)
    b = permutation_test_global(x, w, seed=1, kernel=_kernels.global_moran_perm_numpy)
    assert a.p_value == b.p_value
    assert a.z_score == pytest.approx(b.z_score, rel=1e-10)


def test_permutation_mean_expectation():
    rng = np.random.default_rng(10)
    lat, lon = grid()
    w = knn_weights(lat, lon, k=10)
    x = rng.normal(size=100)
    z = x - x.mean()
    perms = np.stack([rng.permutation(100) for _ in range(10_000)])
    sims = _kernels.global_moran_perm(z, w.neighbors, w.weights, perms, 100 / (z @ z * w.s0))
    assert sims[0] == pytest.approx(morans_i(x[perms[0]], w), rel=1e-10)
    se = sims.std(ddof=1) / math.sqrt(sims.size)
    assert abs(sims.mean() + 1 / 99) < 3 * se


@pytest.mark.slow
def test_global_calibration():
    lat, lon = grid()
    w = knn_weights(lat, lon, k=10)
    rejects = 0
    for t in range(200):
        x = np.random.default_rng(1000 + t).normal(size=100)
        rejects += permutation_test_global(x, w, n_perm=999, seed=t).p_value < 0.05
    assert 0.03 <= rejects / 200 <= 0.07


def test_draw_distinct_backends_agree():
    rng = np.random.default_rng(0)
    u = rng.random((500, 8))
    out = np.empty(8, dtype=np.int64)
    ref = _kernels.draw_distinct_numpy(u, 20)
    for r in range(500):
        _kernels._draw_distinct_numba(u[r], 20, out)
        assert out.tolist() == ref[r].tolist()
        assert len(set(out.tolist())) == 8 and out.min() >= 0 and out.max() < 20


def test_draw_distinct_uniform():
    u = np.random.default_rng(1).random((20_000, 3))
    d = _kernels.draw_distinct_numpy(u, 6)
    counts = np.bincount(d.ravel(), minlength=6)
    # every value has probability 1/2 of being in a 3-of-6 draw
    assert stats.chisquare(counts).pvalue > 0.001


def block_field(seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 1, (10, 10))
    x[3:6, 3:6] += 8.0
    return x.ravel()


def test_lisa_block_hh(backend):
    lat, lon = grid()
    w = knn_weights(lat, lon, k=8)
    recs = permutation_test_local(block_field(), w, n_perm=999, seed=7, kernel=kernels(backend)["local_perm"])
    block = [r * 10 + c for r in range(3, 6) for c in range(3, 6)]
    assert all(recs[i].category == "HH" and recs[i].p_value < 0.05 for i in block)


def test_lisa_single_outlier_hl():
    lat, lon = grid()
    w = knn_weights(lat, lon, k=8)
    x = np.full((10, 10), 5.0) + np.random.default_rng(2).normal(0, 0.3, (10, 10))
    x[4:7, 4:7] = 0.0
    x[5, 5] = 10.0
    recs = permutation_test_local(x.ravel(), w, n_perm=999, seed=1)
    assert recs[55].category == "HL"
    assert recs[55].local_i < 0


def test_lisa_categories_consistent_with_sign():
    lat, lon = grid()
    w = knn_weights(lat, lon, k=8)
    x = np.random.default_rng(4).normal(size=100) + np.repeat(np.arange(10.0), 10) * 0.3
    for r in permutation_test_local(x, w, n_perm=199, seed=2):
        if r.category in ("HH", "LL"):
            assert r.local_i > 0
        elif r.category in ("HL", "LH"):
            assert r.local_i < 0
        else:
            assert r.category == "ns" and r.p_value >= 0.05


def test_lisa_deterministic_across_workers_and_backends():
    lat, lon = grid()
    w = knn_weights(lat, lon, k=8)
    x = np.random.default_rng(3).normal(size=100)
    a = permutation_test_local(x, w, seed=5, workers=1, kernel=_kernels.local_moran_perm_numba)
    b = permutation_test_local(x, w, seed=5, workers=4, kernel=_kernels.local_moran_perm_numba)
    c = permutation_test_local(x, w, seed=5, kernel=_kernels.local_moran_perm_numpy)
    assert a == b
    assert [r.p_value for r in a] == [r.p_value for r in c]
    assert [r.category for r in a] == [r.category for r in c]


def test_lisa_noise_rate():
    lat, lon = grid()
    w = knn_weights(lat, lon, k=8)
    sig = 0
    for s in range(10):
        x = np.random.default_rng(200 + s).normal(size=100)
        sig += sum(r.category != "ns" for r in permutation_test_local(x, w, n_perm=199, seed=s))
    assert 0.02 <= sig / 1000 <= 0.09


def test_n_perm_minimum():
    with pytest.raises(ValueError):
        permutation_test_global([1.0, 2.0, 3.0, 4.0], ring4(), n_perm=98)
    with pytest.raises(ValueError):
        permutation_test_local([1.0, 2.0, 3.0, 4.0], ring4(), n_perm=10)


def test_pearson_examples():
    x = np.arange(10.0)
    assert pearson(x, 2 * x + 1) == 1.0
    assert pearson(x, -x) == -1.0
    with pytest.raises(UndefinedStatisticError):
        pearson(x, np.ones(10))
    with pytest.raises(ValueError):
        pearson([1, 2], [3, 4])


def test_pearson_oracle_and_invariance():
    rng = np.random.default_rng(8)
    for _ in range(100):
        n = int(rng.integers(3, 50))
        x, y = rng.normal(size=n), rng.normal(size=n)
        mx, my = sum(x) / n, sum(y) / n
        num = sum((a - mx) * (b - my) for a, b in zip(x, y))
        den = math.sqrt(sum((a - mx) ** 2 for a in x) * sum((b - my) ** 2 for b in y))
        r = pearson(x, y)
        assert abs(r - num / den) <= 1e-12
        assert pearson(3 * x + 7, 0.5 * y - 2) == pytest.approx(r, abs=1e-12)
        assert pearson(-x, y) == pytest.approx(-r, abs=1e-12)
        assert pearson_pvalue(r, n) == pytest.approx(stats.pearsonr(x, y).pvalue, rel=1e-8, abs=1e-14)


def test_fdr_examples():
    assert fdr_adjust([0.01, 0.02, 0.03, 0.04]).tolist() == [0.04] * 4
    assert fdr_adjust([0.3]).tolist() == [0.3]
    assert fdr_adjust([1.0, 1.0, 1.0]).tolist() == [1.0] * 3
    with pytest.raises(ValueError):
        fdr_adjust([0.5, 1.2])


def test_fdr_matches_brute_force():
    rng = np.random.default_rng(12)
    for _ in range(200):
        p = rng.uniform(0, 1, size=rng.integers(1, 30)) ** rng.uniform(1, 4)
        adj = fdr_adjust(p)
        assert np.max(np.abs(adj - fdr_brute(list(p)))) <= 1e-12
        assert np.all(adj >= p * (1 - 1e-15))  # p*m/m may round one ulp low
        order = np.argsort(p, kind="stable")
        assert np.all(np.diff(adj[order]) >= 0)
