"""Spatial weights, global/local Moran's I with permutation inference, Pearson and BH-FDR."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from . import _kernels
from .errors import UndefinedStatisticError

GLOBAL_STREAM = 0
LOCAL_STREAM = 1


@dataclass(frozen=True)
class SpatialWeights:
    """k-nearest-neighbour weights; row ``i`` lists the ``k`` neighbours of unit ``i``."""

    neighbors: np.ndarray  # (n, k) int64
    weights: np.ndarray  # (n, k) float64
    transform: str = "B"  # "B" binary, "R" row-standardised

    @property
    def n(self):
        return self.neighbors.shape[0]

    @property
    def k(self):
        return self.neighbors.shape[1]

    @property
    def s0(self):
        return float(self.weights.sum())

    def dense(self):
        w = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), self.k)
        np.add.at(w, (rows, self.neighbors.ravel()), self.weights.ravel())
        return w

    def lag(self, z):
        return (self.weights * np.asarray(z)[self.neighbors]).sum(axis=1)


def knn_weights(lat, lon, k=10, row_standardize=False, kernel=None) -> SpatialWeights:
    """Binary k-NN weights by great-circle distance; equal distances go to the lower index."""
    lat = np.ascontiguousarray(lat, dtype=np.float64)
    lon = np.ascontiguousarray(lon, dtype=np.float64)
    n = lat.size
    if not 1 <= k < n:
        raise ValueError(f"k-NN weights need 1 <= k < n (k={k}, n={n})")
    nb = (kernel or _kernels.knn)(lat, lon, k)
    w = np.full((n, k), 1.0 / k if row_standardize else 1.0)
    return SpatialWeights(nb, w, "R" if row_standardize else "B")


@dataclass(frozen=True)
class MetricVector:
    values: np.ndarray

    @property
    def mean(self):
        return float(self.values.mean())

    @property
    def variance_pop(self):
        return float(np.mean((self.values - self.values.mean()) ** 2))


def _centered(x):
    v = x.values if isinstance(x, MetricVector) else np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or not np.all(np.isfinite(v)):
        raise ValueError("values must be a finite 1-D vector")
    if v.size < 2 or np.all(v == v[0]):
        raise UndefinedStatisticError("Moran's I is undefined for a constant field")
    z = v - v.mean()
    m2 = float(np.dot(z, z))
    if m2 == 0.0:
        raise UndefinedStatisticError("Moran's I is undefined for a constant field")
    return v, z, m2


def morans_i(x, w: SpatialWeights) -> float:
    _, z, m2 = _centered(x)
    return float(w.n * np.dot(z, w.lag(z)) / (m2 * w.s0))


def local_morans_i(x, w: SpatialWeights) -> np.ndarray:
    _, z, m2 = _centered(x)
    s2 = m2 / w.n
    return z / s2 * w.lag(z)


class StatResult(NamedTuple):
    statistic: float
    p_value: float
    z_score: float
    n_permutations: int


class LisaRecord(NamedTuple):
    unit_id: object
    local_i: float
    category: str  # HH, LL, HL, LH or ns
    p_value: float


def _rng(seed, stream, index):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, index))))


def _tail_count(sims, observed, expected):
    obs = abs(observed - expected)
    tol = 1e-12 * max(1.0, abs(observed), abs(expected))
    return int(np.count_nonzero(np.abs(sims - expected) >= obs - tol))


def permutation_test_global(x, w: SpatialWeights, n_perm=999, seed=0, kernel=None) -> StatResult:
    """Global Moran's I with a two-sided pseudo p-value under full random relabelling.

    Replicate ``r`` draws its permutation from the substream ``(seed, r)``.
    """
    if n_perm < 99:
        raise ValueError("n_perm must be at least 99")
    _, z, m2 = _centered(x)
    n = w.n
    observed = float(n * np.dot(z, w.lag(z)) / (m2 * w.s0))
    perms = np.stack([_rng(seed, GLOBAL_STREAM, r).permutation(n) for r in range(n_perm)])
    fn = kernel or _kernels.global_moran_perm
    sims = fn(z, w.neighbors, w.weights, perms, n / (m2 * w.s0))
    expected = -1.0 / (n - 1)
    p = (1 + _tail_count(sims, observed, expected)) / (n_perm + 1)
    sd = sims.std()
    zscore = (observed - sims.mean()) / sd if sd > 0 else math.nan
    return StatResult(observed, p, float(zscore), n_perm)


def lisa_category(zi, lag_mean_dev):
    if zi > 0 and lag_mean_dev > 0:
        return "HH"
    if zi < 0 and lag_mean_dev < 0:
        return "LL"
    if zi > 0 and lag_mean_dev < 0:
        return "HL"
    return "LH"


def permutation_test_local(x, w: SpatialWeights, n_perm=999, seed=0, alpha=0.05, unit_ids=None,
                           workers=1, kernel=None):
    """LISA with conditional permutation: unit ``i`` keeps its value, the others are shuffled.

    The p-value is two-sided around the conditional expectation of ``I_i``.
    Unit ``i`` draws from substream ``(seed, i)``, so results do not depend on
    ``workers``.
    """
    if n_perm < 99:
        raise ValueError("n_perm must be at least 99")
    _, z, m2 = _centered(x)
    n, k = w.n, w.k
    s2 = m2 / n
    local = z / s2 * w.lag(z)
    row_w = w.weights.sum(axis=1)
    lag_mean = w.lag(z) / row_w
    fn = kernel or _kernels.local_moran_perm
    ids = list(range(n)) if unit_ids is None else list(unit_ids)

    def one(i):
        u = _rng(seed, LOCAL_STREAM, i).random((n_perm, k))
        sims = fn(i, z, w.neighbors[i], w.weights[i], u, 1.0 / s2)
        expected = -row_w[i] * z[i] ** 2 / ((n - 1) * s2)
        p = (1 + _tail_count(sims, local[i], expected)) / (n_perm + 1)
        cat = lisa_category(z[i], lag_mean[i]) if p < alpha else "ns"
        return LisaRecord(ids[i], float(local[i]), cat, p)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(one, range(n)))
    return [one(i) for i in range(n)]


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 3:
        raise ValueError("pearson needs two equal-length vectors of length >= 3")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    if sxx == 0 or syy == 0 or np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedStatisticError("correlation with a constant vector is undefined")
    return float(np.clip(np.dot(dx, dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def pearson_pvalue(r, n) -> float:
    """Two-sided p-value of H0: rho = 0 from the t distribution with n - 2 df."""
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(2.0 * stats.t.sf(abs(t), n - 2))


def fdr_adjust(p_values) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in input order."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.size == 0:
        return p.copy()
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum(1.0, np.minimum.accumulate(scaled[::-1])[::-1])
    out = np.empty(m)
    out[order] = adj
    return out
