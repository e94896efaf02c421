"""End-to-end run: ingest -> route -> metrics -> stats -> categorise -> export."""
from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .config import RunConfig, clock_label
from .deprivation import categorize_quadrants, join_deprivation
from .errors import InputError, StageError, TTVError, UndefinedStatisticError
from .geometry import nearest_facilities, snap_to_stop
from .gtfs import build_network, parse_feed
from .io import (read_deprivation, read_facilities, read_lookup, read_walk_graph, read_zones, write_csv,
                 write_geojson)
from .metrics import aggregate_regions, summarize_by_settlement, zone_metrics
from .router import Router
from .spatial import (fdr_adjust, knn_weights, pearson, pearson_pvalue, permutation_test_global,
                      permutation_test_local)

log = logging.getLogger(__name__)

OUTPUT_FILES = (
    "zone_metrics.csv",
    "region_aggregates.csv",
    "global_stats.csv",
    "lisa.csv",
    "correlations.csv",
    "quadrants.csv",
    "unreachable_report.csv",
    "settlement_summary.csv",
    "deprivation_exclusions.csv",
    "zones.geojson",
    "manifest.json",
)
INCOMPLETE = "_INCOMPLETE"
LAD_VARS = ("mean_of_means", "mean_ttv", "gini_mean_tt", "gini_ttv")


@contextlib.contextmanager
def stage(name):
    log.info("stage %s", name)
    try:
        yield
    except InputError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _secs(x):
    """Whole-second output value for a duration; None stays None (unreachable / undefined)."""
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return None
    return int(round(x))


def _sha256(path: Path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def input_digests(cfg: RunConfig):
    out = {}
    gtfs = Path(cfg.gtfs_dir)
    for p in sorted(gtfs.iterdir()):
        if p.is_file():
            out[f"gtfs/{p.name}"] = _sha256(p)
    for key in ("zones", "facilities", "walk_nodes", "walk_edges", "deprivation", "lookup"):
        p = getattr(cfg, key)
        if p is not None:
            out[key] = _sha256(Path(p))
    return out


class Run:
    """State shared by the pipeline stages."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.notes = []

    # -- ingest ------------------------------------------------------------
    def ingest(self):
        cfg = self.cfg
        self.feed = parse_feed(cfg.gtfs_dir)
        self.zones = read_zones(cfg.zones)
        if not self.zones:
            raise InputError("no zones")
        self.facilities = read_facilities(cfg.facilities)
        self.walk = read_walk_graph(cfg.walk_nodes, cfg.walk_edges) if cfg.walk_nodes else None
        self.network = build_network(self.feed, cfg.service_date, self.walk, cfg.max_transfer_m)
        self.deprivation = read_deprivation(cfg.deprivation) if cfg.deprivation else None
        self.lookup = read_lookup(cfg.lookup) if cfg.lookup else None
        if self.deprivation is not None and self.lookup is None:
            # same boundary revision: identity lookup
            from .deprivation import LookupRow

            self.lookup = [LookupRow(z.zone_id, z.zone_id, "unchanged") for z in self.zones]
        for kind in cfg.kinds:
            if not any(f.kind == kind for f in self.facilities):
                raise InputError(f"no facility of kind {kind!r}")

    # -- route -------------------------------------------------------------
    def route(self):
        cfg = self.cfg
        self.zones = [snap_to_stop(z, self.network) for z in self.zones]
        router = Router(self.network, self.walk, cfg.query())
        router.prepare(self.facilities)
        cands = {
            z.zone_id: {k: nearest_facilities(z, self.facilities, k, cfg.k_facilities) for k in cfg.kinds}
            for z in self.zones
        }

        def one(zone):
            per_kind = cands[zone.zone_id]
            dests = []
            for k in cfg.kinds:
                dests += [f for f in per_kind[k] if f not in dests]
            slot = {f.facility_id: i for i, f in enumerate(dests)}
            out = {k: np.full(len(cfg.hours), math.inf) for k in cfg.kinds}
            for h, dep in enumerate(cfg.hours):
                res = router.profile(zone.snapped_stop, dests, dep)
                for k in cfg.kinds:
                    out[k][h] = min(res[slot[f.facility_id]].seconds for f in per_kind[k])
            return out

        if cfg.workers > 1:
            with ThreadPoolExecutor(cfg.workers) as ex:
                results = list(ex.map(one, self.zones))
        else:
            results = [one(z) for z in self.zones]
        self.hourly = {k: {z.zone_id: r[k] for z, r in zip(self.zones, results)} for k in cfg.kinds}

    # -- metrics -----------------------------------------------------------
    def metrics(self):
        lad_of = {z.zone_id: z.lad_code for z in self.zones}
        cls_of = {z.zone_id: z.settlement_class for z in self.zones}
        self.zm, self.regions, self.summary = {}, {}, {}
        for k in self.cfg.kinds:
            zm = [zone_metrics(z.zone_id, k, self.hourly[k][z.zone_id]) for z in self.zones]
            self.zm[k] = zm
            self.regions[k] = aggregate_regions(zm, lad_of)
            self.summary[k] = (summarize_by_settlement(zm, cls_of, binary=True)
                               + summarize_by_settlement(zm, cls_of))

    # -- stats -------------------------------------------------------------
    def stats(self):
        cfg = self.cfg
        by_id = {z.zone_id: z for z in self.zones}
        self.global_rows, self.lisa = [], {}
        for k in cfg.kinds:
            ok = [m for m in self.zm[k] if m.reachable]
            if len(ok) <= cfg.knn_k:
                self.notes.append(f"{k}: {len(ok)} reachable zones, too few for k={cfg.knn_k} weights")
                for metric in ("ttv", "mean_tt"):
                    self.global_rows.append([metric, k, len(ok), None, None, None, "too few reachable zones"])
                continue
            lat = np.array([by_id[m.zone_id].lat for m in ok])
            lon = np.array([by_id[m.zone_id].lon for m in ok])
            w = knn_weights(lat, lon, cfg.knn_k, cfg.row_standardize)
            for metric in ("ttv", "mean_tt"):
                x = np.array([getattr(m, metric) for m in ok])
                try:
                    res = permutation_test_global(x, w, cfg.n_perm, cfg.seed)
                    self.global_rows.append([metric, k, len(ok), res.statistic, res.p_value, res.z_score, ""])
                except UndefinedStatisticError as exc:
                    self.global_rows.append([metric, k, len(ok), None, None, None, str(exc)])
                if metric == "ttv":
                    try:
                        recs = permutation_test_local(x, w, cfg.n_perm, cfg.seed, cfg.alpha,
                                                      [m.zone_id for m in ok], workers=cfg.workers)
                        self.lisa[k] = {r.unit_id: r for r in recs}
                    except UndefinedStatisticError as exc:
                        self.notes.append(f"{k}: LISA skipped ({exc})")

        self.imd, merged, self.dep_excluded = ({}, set(), [])
        if self.deprivation is not None:
            self.imd, merged, self.dep_excluded = join_deprivation(
                [z.zone_id for z in self.zones], self.deprivation, self.lookup)
        self.imd_merged = merged

        rows = []
        for k in cfg.kinds:
            regs = [r for r in self.regions[k] if not r.excluded]
            for a, b in combinations(LAD_VARS, 2):
                rows.append((f"{a}~{b}", k, "lad", [getattr(r, a) for r in regs], [getattr(r, b) for r in regs]))
            ok = [m for m in self.zm[k] if m.reachable]
            rows.append(("mean_tt~ttv", k, "zone", [m.mean_tt for m in ok], [m.ttv for m in ok]))
            if self.imd:
                both = [m for m in ok if m.zone_id in self.imd]
                rows.append(("ttv~imd", k, "zone", [m.ttv for m in both], [self.imd[m.zone_id] for m in both]))
        computed = []
        for pair, k, level, x, y in rows:
            try:
                r = pearson(x, y)
            except (UndefinedStatisticError, ValueError) as exc:
                self.notes.append(f"correlation {k}/{level}/{pair} skipped: {exc}")
                continue
            computed.append([pair, k, level, len(x), r, pearson_pvalue(r, len(x))])
        adj = fdr_adjust([c[5] for c in computed])
        self.correlations = [c + [float(p)] for c, p in zip(computed, adj)]

    # -- categorise --------------------------------------------------------
    def categorize(self):
        self.quadrants = {}
        if not self.imd:
            return
        for k in self.cfg.kinds:
            ok = [m for m in self.zm[k] if m.reachable and m.zone_id in self.imd]
            try:
                recs = categorize_quadrants([m.zone_id for m in ok], [m.ttv for m in ok],
                                            [self.imd[m.zone_id] for m in ok], self.cfg.quantile_threshold)
            except UndefinedStatisticError as exc:
                self.notes.append(f"{k}: quadrants skipped ({exc})")
                continue
            self.quadrants[k] = {r.zone_id: r for r in recs}

    # -- export ------------------------------------------------------------
    def zone_attributes(self):
        """Typed per-zone attributes shared by the CSV and GeoJSON writers."""
        cfg = self.cfg
        labels = [clock_label(h) for h in cfg.hours]
        out = []
        for i, z in enumerate(self.zones):
            props = dict(zone_id=z.zone_id, lad_code=z.lad_code, settlement_class=z.settlement_class,
                         snapped_stop=z.snapped_stop, snap_distance_m=round(z.snap_distance_m, 3),
                         imd_score=self.imd.get(z.zone_id) if self.imd else None)
            for k in cfg.kinds:
                m = self.zm[k][i]
                for lab, v in zip(labels, m.hourly):
                    props[f"{k}_tt_h{lab}"] = _secs(float(v))
                props[f"{k}_mean_tt_s"] = _secs(m.mean_tt)
                props[f"{k}_ttv_s"] = _secs(m.ttv)
                props[f"{k}_reachable"] = m.reachable
                props[f"{k}_n_unreachable_hours"] = m.n_unreachable_hours
                rec = self.lisa.get(k, {}).get(z.zone_id)
                props[f"{k}_lisa_local_i"] = rec.local_i if rec else None
                props[f"{k}_lisa_p_value"] = rec.p_value if rec else None
                props[f"{k}_lisa_category"] = rec.category if rec else None
                q = self.quadrants.get(k, {}).get(z.zone_id)
                props[f"{k}_quadrant"] = q.quadrant if q else None
            out.append(props)
        return out

    def export(self, out: Path):
        cfg = self.cfg
        labels = [clock_label(h) for h in cfg.hours]
        attrs = self.zone_attributes()

        header = ["zone_id", "kind", *[f"tt_h{lab}" for lab in labels], "mean_tt_s", "ttv_s", "reachable",
                  "n_unreachable_hours"]
        rows = []
        for k in cfg.kinds:
            for a in attrs:
                rows.append([a["zone_id"], k, *[a[f"{k}_tt_h{lab}"] for lab in labels], a[f"{k}_mean_tt_s"],
                             a[f"{k}_ttv_s"], a[f"{k}_reachable"], a[f"{k}_n_unreachable_hours"]])
        write_csv(out / "zone_metrics.csv", header, rows)

        write_csv(out / "region_aggregates.csv",
                  ["lad_code", "kind", "n_zones", "n_reachable", "mean_of_means_s", "mean_ttv_s", "gini_mean_tt",
                   "gini_ttv", "excluded"],
                  [[r.lad_code, r.kind, r.n_zones, r.n_reachable, _secs(r.mean_of_means), _secs(r.mean_ttv),
                    r.gini_mean_tt, r.gini_ttv, r.excluded] for k in cfg.kinds for r in self.regions[k]])

        write_csv(out / "settlement_summary.csv",
                  ["kind", "settlement_class", "count", "mean_s", "median_s", "std_s", "iqr_s", "min_s", "max_s"],
                  [[k, s["settlement_class"], s["count"], *[_secs(s[f]) for f in
                                                            ("mean", "median", "std", "iqr", "min", "max")]]
                   for k in cfg.kinds for s in self.summary[k]])

        write_csv(out / "global_stats.csv", ["metric", "kind", "n", "morans_i", "p_value", "z_score", "note"],
                  self.global_rows)

        write_csv(out / "lisa.csv", ["unit_id", "kind", "local_i", "p_value", "category"],
                  [[a["zone_id"], k, a[f"{k}_lisa_local_i"], a[f"{k}_lisa_p_value"], a[f"{k}_lisa_category"]]
                   for k in cfg.kinds if k in self.lisa for a in attrs if a[f"{k}_lisa_category"] is not None])

        write_csv(out / "correlations.csv", ["pair", "kind", "level", "n", "r", "p_raw", "p_fdr"],
                  self.correlations)

        qrows = []
        for k in cfg.kinds:
            for m in self.zm[k]:
                q = self.quadrants.get(k, {}).get(m.zone_id)
                if q is not None:
                    qrows.append([m.zone_id, k, _secs(m.ttv), self.imd[m.zone_id], m.zone_id in self.imd_merged,
                                  q.ttv_rank_pct, q.imd_rank_pct, q.quadrant])
        write_csv(out / "quadrants.csv",
                  ["zone_id", "kind", "ttv_s", "imd_score", "imd_merged_mean", "ttv_rank_pct", "imd_rank_pct",
                   "quadrant"], qrows)

        urows = []
        for k in cfg.kinds:
            for z, m in zip(self.zones, self.zm[k]):
                if not m.reachable:
                    hours = ";".join(lab for lab, v in zip(labels, m.hourly) if not math.isfinite(v))
                    urows.append([z.zone_id, k, m.n_unreachable_hours, hours, z.snapped_stop,
                                  round(z.snap_distance_m, 3)])
        write_csv(out / "unreachable_report.csv",
                  ["zone_id", "kind", "n_unreachable_hours", "unreachable_hours", "snapped_stop", "snap_distance_m"],
                  urows)

        write_csv(out / "deprivation_exclusions.csv", ["zone_id", "reason"], self.dep_excluded)

        write_geojson(out / "zones.geojson", [(z.lon, z.lat, a) for z, a in zip(self.zones, attrs)])

        manifest = dict(
            tool="ttvaccess",
            version=__version__,
            backend="numba" if _kernels.USE_NUMBA else "numpy",
            seed=cfg.seed,
            config=cfg.to_dict(),
            inputs=input_digests(cfg),
            notes=self.notes,
            outputs={name: _sha256(out / name) for name in OUTPUT_FILES if name != "manifest.json"},
        )
        with open(out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")


def run_pipeline(cfg: RunConfig, out_dir) -> Path:
    """Run every stage and write the output files into ``out_dir``.

    A ``_INCOMPLETE`` marker holds the directory until export finishes; on
    failure it stays behind with the error message.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in OUTPUT_FILES:
        (out / name).unlink(missing_ok=True)
    marker = out / INCOMPLETE
    marker.write_text("run in progress\n", encoding="utf-8")
    run = Run(cfg)
    try:
        with stage("ingest"):
            run.ingest()
        with stage("route"):
            run.route()
        with stage("metrics"):
            run.metrics()
        with stage("stats"):
            run.stats()
        with stage("categorize"):
            run.categorize()
        with stage("export"):
            run.export(out)
    except TTVError as exc:
        marker.write_text(f"run failed: {exc}\n", encoding="utf-8")
        raise
    marker.unlink()
    return out


def read_zone_metrics(run_dir):
    with open(Path(run_dir) / "zone_metrics.csv", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def compare_runs(run_dirs):
    """Pairwise Pearson correlation of zone TTV between runs, per facility kind.

    Only zones reachable in every run enter a comparison. Returns rows
    ``(kind, run_a, run_b, n, r)``.
    """
    tables = [read_zone_metrics(d) for d in run_dirs]
    kinds = sorted({row["kind"] for t in tables for row in t})
    out = []
    for kind in kinds:
        ttv = []
        for t in tables:
            ttv.append({r["zone_id"]: float(r["ttv_s"]) for r in t if r["kind"] == kind and r["reachable"] == "true"})
        common = sorted(set.intersection(*(set(d) for d in ttv)))
        for a, b in combinations(range(len(run_dirs)), 2):
            x = [ttv[a][z] for z in common]
            y = [ttv[b][z] for z in common]
            try:
                r = pearson(x, y)
            except (UndefinedStatisticError, ValueError):
                r = None
            out.append((kind, str(run_dirs[a]), str(run_dirs[b]), len(common), r))
    return out
