"""Per-zone travel-time metrics, Gini coefficients and district/settlement summaries."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import UndefinedStatisticError
from .geometry import SETTLEMENT_CLASSES, settlement_binary


@dataclass(frozen=True)
class ZoneMetrics:
    zone_id: str
    kind: str
    hourly: np.ndarray  # seconds, inf where unreachable
    mean_tt: float | None
    ttv: float | None
    reachable: bool
    n_unreachable_hours: int


@dataclass(frozen=True)
class RegionAggregate:
    lad_code: str
    kind: str
    n_zones: int
    n_reachable: int
    mean_of_means: float | None
    mean_ttv: float | None
    gini_mean_tt: float | None
    gini_ttv: float | None

    @property
    def excluded(self):
        return self.n_reachable == 0


def ttv(hourly) -> float:
    """Travel time variability: population standard deviation of the hourly travel times."""
    x = np.asarray(hourly, dtype=np.float64)
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise UndefinedStatisticError("TTV needs a finite travel time for every departure hour")
    return float(np.sqrt(np.mean((x - x.mean()) ** 2)))


def gini(values) -> float:
    """Gini coefficient of non-negative values via the sorted rank-weighted sum.

    ``G = sum_i (2i - n - 1) x_(i) / (n * sum_i x_i)`` with ``x`` ascending and
    ``i`` from 1. An all-zero vector is perfectly equal (0).
    """
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = x.size
    if n == 0:
        raise ValueError("gini of an empty vector")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("gini is defined for finite non-negative values only")
    total = x.sum()
    if total == 0:
        return 0.0
    i = np.arange(1, n + 1, dtype=np.float64)
    return float(np.dot(2 * i - n - 1, x) / (n * total))


def zone_metrics(zone_id, kind, hourly) -> ZoneMetrics:
    h = np.asarray(hourly, dtype=np.float64)
    missing = int(np.count_nonzero(~np.isfinite(h)))
    if missing:
        return ZoneMetrics(zone_id, kind, h, None, None, False, missing)
    return ZoneMetrics(zone_id, kind, h, float(h.mean()), ttv(h), True, 0)


def aggregate_region(zones, lad_code, kind=None) -> RegionAggregate:
    """Means and Gini coefficients over the reachable zones of one district.

    A district without reachable zones comes back with ``excluded == True``
    and empty statistics.
    """
    zones = list(zones)
    kind = kind if kind is not None else (zones[0].kind if zones else "")
    ok = [z for z in zones if z.reachable]
    if not ok:
        return RegionAggregate(lad_code, kind, len(zones), 0, None, None, None, None)
    means = np.array([z.mean_tt for z in ok])
    ttvs = np.array([z.ttv for z in ok])
    return RegionAggregate(
        lad_code, kind, len(zones), len(ok),
        float(means.mean()), float(ttvs.mean()), gini(means), gini(ttvs),
    )


def aggregate_regions(zone_metrics_list, lad_of):
    """Group by district (``lad_of[zone_id]``) and aggregate; sorted by district code."""
    groups = defaultdict(list)
    for z in zone_metrics_list:
        groups[lad_of[z.zone_id]].append(z)
    return [aggregate_region(groups[lad], lad) for lad in sorted(groups)]


SUMMARY_FIELDS = ("count", "mean", "median", "std", "iqr", "min", "max")


def summarize_by_settlement(zones, classes, binary=False):
    """TTV order statistics per settlement class over reachable zones.

    ``classes`` maps zone_id -> settlement class code. With ``binary`` the
    classes collapse to urban/rural. Classes without reachable zones are
    omitted. ``std`` is the sample standard deviation (n - 1); median and IQR
    use linear interpolation.
    """
    groups = defaultdict(list)
    for z in zones:
        if not z.reachable:
            continue
        c = classes[z.zone_id]
        groups[settlement_binary(c) if binary else c].append(z.ttv)
    order = ("urban", "rural") if binary else SETTLEMENT_CLASSES
    rows = []
    for c in order:
        if c not in groups:
            continue
        x = np.array(groups[c], dtype=np.float64)
        q1, med, q3 = np.percentile(x, [25, 50, 75])
        rows.append(
            dict(
                settlement_class=c,
                count=int(x.size),
                mean=float(x.mean()),
                median=float(med),
                std=float(x.std(ddof=1)) if x.size > 1 else math.nan,
                iqr=float(q3 - q1),
                min=float(x.min()),
                max=float(x.max()),
            )
        )
    return rows
