"""Synthetic test city: a grid of zones with a frequent downtown and an hourly periphery.

Every grid cell is one zone with one bus stop. Each row and column carries a
slow "regional" line that runs ``rural_headway`` minutes apart with departure
minutes drawn afresh every hour, so waiting times at the periphery change
from hour to hour. Inside the downtown block, short circulator lines run
every ``downtown_headway`` minutes on a regular clock-face timetable.
"""
from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._kernels import haversine_np
from .config import RunConfig, dump_config
from .gtfs import CalendarRow, RawFeed, Route, Stop, StopTime, Trip, write_feed
from .io import write_csv

LAT0, LON0 = 52.0, -1.5
CELL_M = 3000.0
BUS_KMH = 30.0
SERVICE_HOURS = range(6, 22)
SERVICE_DATE = dt.date(2024, 5, 30)


@dataclass
class SyntheticCity:
    feed: RawFeed
    zones: list  # rows for zones.csv
    facilities: list
    walk_nodes: list
    walk_edges: list
    deprivation: list
    lookup: list
    meta: dict = field(default_factory=dict)

    def write(self, out_dir, **run_overrides) -> Path:
        """Write GTFS + CSV inputs and a ``run.toml`` under ``out_dir``; return the config path."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_feed(self.feed, out / "gtfs")
        write_csv(out / "zones.csv", ["zone_id", "lat", "lon", "lad_code", "settlement_class"], self.zones)
        write_csv(out / "facilities.csv", ["facility_id", "kind", "lat", "lon"], self.facilities)
        write_csv(out / "walk_nodes.csv", ["node_id", "lat", "lon"], self.walk_nodes)
        write_csv(out / "walk_edges.csv", ["from_node", "to_node", "length_m"], self.walk_edges)
        write_csv(out / "deprivation.csv", ["zone_id_old", "imd_score"], self.deprivation)
        write_csv(out / "lookup.csv", ["zone_id_old", "zone_id_new", "change_type"], self.lookup)
        cfg = RunConfig(
            gtfs_dir=out / "gtfs",
            zones=out / "zones.csv",
            facilities=out / "facilities.csv",
            walk_nodes=out / "walk_nodes.csv",
            walk_edges=out / "walk_edges.csv",
            deprivation=out / "deprivation.csv",
            lookup=out / "lookup.csv",
            service_date=SERVICE_DATE,
            seed=int(self.meta.get("seed", 0)),
            **run_overrides,
        )
        dump_config(cfg, out / "run.toml", relative_to=out)
        return out / "run.toml"


def _cell_latlon(r, c):
    dlat = CELL_M / 111_195.0
    dlon = dlat / math.cos(math.radians(LAT0))
    return LAT0 + r * dlat, LON0 + c * dlon


def _settlement(ring, downtown_radius):
    if ring <= downtown_radius:
        return "UN1"
    if ring <= downtown_radius + 1:
        return "UF1"
    return ("RLN1", "RLF1", "RSN1", "RSF1")[min(3, ring - downtown_radius - 2)]


def generate_synthetic_city(rows=10, cols=10, downtown_headway=10, rural_headway=60, seed=7, knn_k=10,
                            lad_size=3) -> SyntheticCity:
    if rows * cols < knn_k + 1:
        raise ValueError(f"a {rows}x{cols} grid has fewer than knn_k + 1 = {knn_k + 1} zones")
    if downtown_headway <= 0 or rural_headway <= 0:
        raise ValueError("headways must be positive")
    rng = np.random.default_rng(seed)
    cr, cc = (rows - 1) / 2.0, (cols - 1) / 2.0
    downtown_radius = max(1, min(rows, cols) // 10)

    def ring(r, c):
        return int(math.floor(max(abs(r - cr), abs(c - cc))))

    stops, zones, cells = [], [], {}
    for r in range(rows):
        for c in range(cols):
            lat, lon = _cell_latlon(r, c)
            sid = f"S{r:02d}{c:02d}"
            cells[(r, c)] = sid
            stops.append(Stop(sid, f"Stop {r}-{c}", round(lat, 6), round(lon, 6)))
            jl, jo = rng.uniform(-0.0015, 0.0015, 2)
            zid = f"Z{r:02d}{c:02d}"
            lad = f"L{r // lad_size:02d}{c // lad_size:02d}"
            zones.append([zid, round(lat + jl, 6), round(lon + jo, 6), lad, _settlement(ring(r, c), downtown_radius)])

    hop = int(round(CELL_M / (BUS_KMH / 3.6) / 60.0)) * 60
    routes, trips, stop_times = [], [], []

    def add_line(route_id, seq, departures):
        routes.append(Route(route_id, 3))
        for direction, ss in enumerate((seq, seq[::-1])):
            for n, t0 in enumerate(departures[direction]):
                tid = f"{route_id}_{direction}_{n:03d}"
                trips.append(Trip(tid, route_id, "WK"))
                for i, s in enumerate(ss):
                    t = int(t0 + i * hop)
                    stop_times.append(StopTime(tid, i + 1, t, t, s))

    def irregular():
        deps = []
        for h in SERVICE_HOURS:
            for j in range(max(1, 60 // rural_headway)):
                if rng.random() < 0.15:  # occasional missed run
                    continue
                slot = min(rural_headway, 60)
                deps.append(h * 3600 + j * slot * 60 + int(rng.integers(0, slot)) * 60)
        return sorted(deps)

    for r in range(rows):
        add_line(f"ROW{r:02d}", [cells[(r, c)] for c in range(cols)], (irregular(), irregular()))
    for c in range(cols):
        add_line(f"COL{c:02d}", [cells[(r, c)] for r in range(rows)], (irregular(), irregular()))

    # circulators cover the urban rings
    urban_r = [r for r in range(rows) if math.floor(abs(r - cr)) <= downtown_radius + 1]
    urban_c = [c for c in range(cols) if math.floor(abs(c - cc)) <= downtown_radius + 1]
    lo_r, hi_r, lo_c, hi_c = urban_r[0], urban_r[-1], urban_c[0], urban_c[-1]
    regular = [h * 3600 + m * 60 for h in SERVICE_HOURS for m in range(0, 60, downtown_headway)]
    for r in range(lo_r, hi_r + 1):
        off = int(rng.integers(0, downtown_headway)) * 60
        add_line(f"DTR{r:02d}", [cells[(r, c)] for c in range(lo_c, hi_c + 1)],
                 ([t + off for t in regular], [t + off for t in regular]))
    for c in range(lo_c, hi_c + 1):
        off = int(rng.integers(0, downtown_headway)) * 60
        add_line(f"DTC{c:02d}", [cells[(r, c)] for r in range(lo_r, hi_r + 1)],
                 ([t + off for t in regular], [t + off for t in regular]))

    calendar = [CalendarRow("WK", (True,) * 5 + (False, False), dt.date(2024, 1, 1), dt.date(2024, 12, 31))]
    feed = RawFeed(stops, routes, trips, stop_times, calendar, [])

    # one hospital in the centre, GPs downtown plus a few scattered over the periphery
    def near(r, c):
        lat, lon = _cell_latlon(r, c)
        return round(lat + 0.0012, 6), round(lon + 0.0012, 6)

    mid = (int(round(cr)), int(round(cc)))
    facilities = [["H1", "hospital", *near(*mid)]]
    gp_cells = [mid]
    outer = [(r, c) for r in range(rows) for c in range(cols) if ring(r, c) > downtown_radius + 1]
    if outer:
        for i in rng.choice(len(outer), size=min(len(outer), max(1, rows * cols // 25)), replace=False):
            gp_cells.append(outer[int(i)])
    for n, (r, c) in enumerate(sorted(gp_cells)):
        facilities.append([f"GP{n + 1:02d}", "GP", *near(r, c)])

    # pedestrian lattice at half-cell spacing
    walk_nodes, walk_edges = [], []
    nr, nc = 2 * rows - 1, 2 * cols - 1
    for i in range(nr):
        for j in range(nc):
            lat, lon = _cell_latlon(i / 2.0, j / 2.0)
            walk_nodes.append([f"N{i:03d}{j:03d}", round(lat, 6), round(lon, 6)])
    for i in range(nr):
        for j in range(nc):
            for di, dj in ((0, 1), (1, 0)):
                a, b = (i, j), (i + di, j + dj)
                if b[0] >= nr or b[1] >= nc:
                    continue
                na, nb = walk_nodes[a[0] * nc + a[1]], walk_nodes[b[0] * nc + b[1]]
                length = float(haversine_np(na[1], na[2], nb[1], nb[2]))
                walk_edges.append([na[0], nb[0], round(length * 1.0005, 3)])

    # deprivation on the previous boundary revision: mostly unchanged, one split, one merge, one redraw
    zone_ids = [z[0] for z in zones]
    base = {z[0]: float(np.clip(rng.normal(30 - 2 * ring(int(z[0][1:3]), int(z[0][3:5])), 8), 1, 90))
            for z in zones}
    special = rng.choice(len(zone_ids), size=4, replace=False)
    split_a, split_b, merge_z, redraw_z = (zone_ids[int(i)] for i in special)
    deprivation, lookup = [], []
    for z in zone_ids:
        if z == split_b:
            continue
        if z == split_a:
            old = "O" + z[1:]
            deprivation.append([old, round(base[z], 2)])
            lookup += [[old, split_a, "S"], [old, split_b, "S"]]
        elif z == merge_z:
            for part, shift in (("a", -5.0), ("b", 5.0)):
                old = "O" + z[1:] + part
                deprivation.append([old, round(max(0.0, base[z] + shift), 2)])
                lookup.append([old, z, "M"])
        elif z == redraw_z:
            old = "O" + z[1:]
            deprivation.append([old, round(base[z], 2)])
            lookup.append([old, z, "X"])
        else:
            old = "O" + z[1:]
            deprivation.append([old, round(base[z], 2)])
            lookup.append([old, z, "U"])

    meta = dict(seed=seed, rows=rows, cols=cols, downtown_radius=downtown_radius,
                downtown_headway=downtown_headway, rural_headway=rural_headway)
    return SyntheticCity(feed, zones, facilities, walk_nodes, walk_edges, deprivation, lookup, meta)
