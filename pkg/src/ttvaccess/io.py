"""CSV / GeoJSON readers and writers for the pipeline's tabular inputs and outputs."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .deprivation import LookupRow, normalize_change
from .errors import InputError
from .geometry import Facility, WalkGraph, Zone


def _rows(path, required):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing input file {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        header = [c.strip() for c in (reader.fieldnames or [])]
        reader.fieldnames = header
        for col in required:
            if col not in header:
                raise InputError(f"{path.name}: missing column '{col}'")
        for row in reader:
            yield reader.line_num, {k: (v or "").strip() for k, v in row.items()}


def _num(path, line, col, raw, conv=float):
    try:
        return conv(raw)
    except ValueError:
        raise InputError(f"{Path(path).name}:{line} [{col}]: bad value {raw!r}") from None


def read_zones(path):
    zones, seen = [], set()
    for line, r in _rows(path, ("zone_id", "lat", "lon", "lad_code", "settlement_class")):
        if r["zone_id"] in seen:
            raise InputError(f"{Path(path).name}:{line}: duplicate zone_id {r['zone_id']!r}")
        seen.add(r["zone_id"])
        zones.append(Zone(r["zone_id"], _num(path, line, "lat", r["lat"]), _num(path, line, "lon", r["lon"]),
                          r["lad_code"], r["settlement_class"]))
    return zones


def read_facilities(path):
    return [
        Facility(r["facility_id"], r["kind"], _num(path, line, "lat", r["lat"]), _num(path, line, "lon", r["lon"]))
        for line, r in _rows(path, ("facility_id", "kind", "lat", "lon"))
    ]


def read_walk_graph(nodes_path, edges_path):
    nodes = [(r["node_id"], _num(nodes_path, line, "lat", r["lat"]), _num(nodes_path, line, "lon", r["lon"]))
             for line, r in _rows(nodes_path, ("node_id", "lat", "lon"))]
    edges = [(r["from_node"], r["to_node"], _num(edges_path, line, "length_m", r["length_m"]))
             for line, r in _rows(edges_path, ("from_node", "to_node", "length_m"))]
    return WalkGraph.from_records(nodes, edges)


def read_deprivation(path):
    out = {}
    for line, r in _rows(path, ("zone_id_old", "imd_score")):
        score = _num(path, line, "imd_score", r["imd_score"])
        if score < 0:
            raise InputError(f"{Path(path).name}:{line}: negative deprivation score")
        if r["zone_id_old"] in out:
            raise InputError(f"{Path(path).name}:{line}: duplicate zone {r['zone_id_old']!r}")
        out[r["zone_id_old"]] = score
    return out


def read_lookup(path):
    rows = []
    for line, r in _rows(path, ("zone_id_old", "zone_id_new", "change_type")):
        try:
            change = normalize_change(r["change_type"])
        except ValueError as exc:
            raise InputError(f"{Path(path).name}:{line}: {exc}") from None
        rows.append(LookupRow(r["zone_id_old"], r["zone_id_new"], change))
    return rows


def cell(value) -> str:
    """Canonical text for one CSV cell; floats use repr so they round-trip exactly."""
    if value is None:
        return ""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_csv(path, header, rows):
    """Write ``rows`` under ``header`` to a path or an open text stream."""
    if hasattr(path, "write"):
        _write_rows(path, header, rows)
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _write_rows(fh, header, rows)


def _write_rows(fh, header, rows):
    w = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(header)
    for row in rows:
        if isinstance(row, dict):
            row = [row.get(h) for h in header]
        w.writerow([cell(v) for v in row])


def write_csv_records(path, records, header=None):
    records = list(records)
    header = header or (list(records[0]) if records else [])
    write_csv(path, header, records)


def json_value(value):
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def write_geojson(path, features):
    """``features``: iterable of ``(lon, lat, properties)``."""
    fc = {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [lon, lat]},
                "properties": {k: json_value(v) for k, v in props.items()},
            }
            for lon, lat, props in features
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fc, fh, indent=1, allow_nan=False)
        fh.write("\n")
