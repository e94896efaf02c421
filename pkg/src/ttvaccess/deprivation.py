"""Deprivation join across zone-boundary revisions and the TTV x deprivation quadrants."""
from __future__ import annotations

from collections import defaultdict
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedStatisticError

CHANGE_TYPES = {"U": "unchanged", "S": "split", "M": "merged", "X": "redrawn"}

QUADRANTS = (
    "HighTTV-MoreDeprived",
    "HighTTV-LessDeprived",
    "LowTTV-MoreDeprived",
    "LowTTV-LessDeprived",
)


class LookupRow(NamedTuple):
    zone_id_old: str
    zone_id_new: str
    change_type: str


class QuadrantRecord(NamedTuple):
    zone_id: str
    ttv_rank_pct: float
    imd_rank_pct: float
    quadrant: str


def normalize_change(code: str) -> str:
    c = code.strip()
    if c.upper() in CHANGE_TYPES:
        return CHANGE_TYPES[c.upper()]
    if c.lower() in CHANGE_TYPES.values():
        return c.lower()
    raise ValueError(f"unknown change type {code!r}")


def join_deprivation(zone_ids, deprivation: dict, lookup):
    """Carry old-revision deprivation scores onto new-revision zones.

    Returns ``(scores, merged, excluded)``: scores per new zone, the set of
    zones whose score is an unweighted mean of merged parents, and a list of
    ``(zone_id, reason)`` for zones left without a score.
    """
    parents = defaultdict(list)
    for row in lookup:
        parents[row.zone_id_new].append(row)
    scores, merged, excluded = {}, set(), []
    for z in zone_ids:
        rows = parents.get(z)
        if not rows:
            excluded.append((z, "missing from lookup"))
            continue
        kinds = {r.change_type for r in rows}
        if "redrawn" in kinds:
            excluded.append((z, "boundary redrawn"))
            continue
        olds = sorted({r.zone_id_old for r in rows})
        missing = [o for o in olds if o not in deprivation]
        if missing:
            excluded.append((z, f"no deprivation score for {';'.join(missing)}"))
            continue
        if len(olds) == 1:
            scores[z] = float(deprivation[olds[0]])
        else:
            scores[z] = float(np.mean([deprivation[o] for o in olds]))
            merged.add(z)
    return scores, merged, excluded


def rank_pct(values) -> np.ndarray:
    """Average-rank percentile in [0, 1]: (rank - 1) / (n - 1)."""
    v = np.asarray(values, dtype=np.float64)
    return (rankdata(v, method="average") - 1.0) / (v.size - 1)


def categorize_quadrants(zone_ids, ttv, imd, threshold=0.30):
    """Four-way TTV x deprivation labels; "top ``threshold``" means rank percentile >= 1 - threshold."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie strictly between 0 and 1")
    zone_ids = list(zone_ids)
    if len(zone_ids) < 10:
        raise UndefinedStatisticError("quadrant percentiles need at least 10 zones")
    tp = rank_pct(ttv)
    ip = rank_pct(imd)
    cut = 1.0 - threshold
    out = []
    for z, a, b in zip(zone_ids, tp, ip):
        high, deprived = a >= cut - 1e-12, b >= cut - 1e-12
        label = ("HighTTV" if high else "LowTTV") + "-" + ("MoreDeprived" if deprived else "LessDeprived")
        out.append(QuadrantRecord(z, float(a), float(b), label))
    return out
