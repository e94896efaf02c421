"""Distances, the pedestrian graph, stop snapping and facility candidate selection."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from ._kernels import EARTH_RADIUS_M, haversine_np
from .errors import InputError

FACILITY_KINDS = ("hospital", "GP")

# 2021 rural-urban classification, most urban first
SETTLEMENT_CLASSES = (
    "UN1",  # urban, nearer to a major town or city
    "UF1",  # urban, further from a major town or city
    "RLN1",  # larger rural, nearer
    "RLF1",  # larger rural, further
    "RSN1",  # smaller rural, nearer
    "RSF1",  # smaller rural, further
)


def settlement_binary(code: str) -> str:
    return "urban" if code.startswith("U") else "rural"


def haversine(a, b) -> float:
    """Great-circle distance in metres between ``(lat, lon)`` pairs on a 6,371 km sphere."""
    return float(haversine_np(a[0], a[1], b[0], b[1]))


def _unit_vectors(lat, lon):
    p = np.radians(lat)
    l = np.radians(lon)
    return np.column_stack([np.cos(p) * np.cos(l), np.cos(p) * np.sin(l), np.sin(p)])


def _chord(metres):
    return 2.0 * math.sin(min(metres / (2.0 * EARTH_RADIUS_M), math.pi / 2))


@dataclass(frozen=True)
class Zone:
    zone_id: str
    lat: float
    lon: float
    lad_code: str
    settlement_class: str
    snapped_stop: str | None = None
    snap_distance_m: float | None = None

    def __post_init__(self):
        if self.settlement_class not in SETTLEMENT_CLASSES:
            raise InputError(f"zone {self.zone_id}: unknown settlement class {self.settlement_class!r}")


@dataclass(frozen=True)
class Facility:
    facility_id: str
    kind: str
    lat: float
    lon: float

    def __post_init__(self):
        if self.kind not in FACILITY_KINDS:
            raise InputError(f"facility {self.facility_id}: kind must be one of {FACILITY_KINDS}")


@dataclass(frozen=True)
class WalkGraph:
    node_ids: tuple
    lat: np.ndarray
    lon: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    edge_m: np.ndarray
    _csr: csr_matrix = field(init=False, repr=False, compare=False)
    _tree: cKDTree = field(init=False, repr=False, compare=False)
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if np.any(self.edge_m <= 0):
            raise InputError("walk edge lengths must be positive")
        if np.any(self.edge_u == self.edge_v):
            raise InputError("walk graph contains a self-loop")
        n = len(self.node_ids)
        # keep the shorter of parallel edges; csr_matrix would sum duplicates
        u = np.concatenate([self.edge_u, self.edge_v])
        v = np.concatenate([self.edge_v, self.edge_u])
        w = np.concatenate([self.edge_m, self.edge_m])
        order = np.lexsort((w, v, u))
        u, v, w = u[order], v[order], w[order]
        first = np.ones(u.size, dtype=bool)
        first[1:] = (u[1:] != u[:-1]) | (v[1:] != v[:-1])
        object.__setattr__(self, "_csr", csr_matrix((w[first], (u[first], v[first])), shape=(n, n)))
        object.__setattr__(self, "_tree", cKDTree(_unit_vectors(self.lat, self.lon)))
        object.__setattr__(self, "_index", {nid: i for i, nid in enumerate(self.node_ids)})

    @classmethod
    def from_records(cls, nodes, edges):
        """``nodes``: iterable of (node_id, lat, lon); ``edges``: (from_id, to_id, length_m)."""
        nodes = list(nodes)
        index = {}
        for i, (nid, _, _) in enumerate(nodes):
            if nid in index:
                raise InputError(f"duplicate walk node {nid!r}")
            index[nid] = i
        u, v, m = [], [], []
        for a, b, length in edges:
            if a not in index or b not in index:
                raise InputError(f"walk edge references unknown node ({a!r}, {b!r})")
            u.append(index[a])
            v.append(index[b])
            m.append(float(length))
        return cls(
            node_ids=tuple(n[0] for n in nodes),
            lat=np.array([n[1] for n in nodes], dtype=np.float64),
            lon=np.array([n[2] for n in nodes], dtype=np.float64),
            edge_u=np.array(u, dtype=np.int64),
            edge_v=np.array(v, dtype=np.int64),
            edge_m=np.array(m, dtype=np.float64),
        )

    def node_index(self, node_id):
        return self._index[node_id]

    def nearest_node(self, lat, lon):
        """Nearest graph node per point: (node indices, straight-line metres)."""
        lat = np.atleast_1d(np.asarray(lat, dtype=np.float64))
        lon = np.atleast_1d(np.asarray(lon, dtype=np.float64))
        _, idx = self._tree.query(_unit_vectors(lat, lon))
        idx = np.asarray(idx, dtype=np.int64)
        return idx, haversine_np(lat, lon, self.lat[idx], self.lon[idx])

    def distances_from(self, nodes, limit=np.inf):
        return dijkstra(self._csr, directed=False, indices=nodes, limit=limit)


def walk_time(graph: WalkGraph, source, target, speed_kmh: float = 3.6) -> float:
    """Shortest walking time in seconds between two node ids; ``math.inf`` when disconnected."""
    i = graph.node_index(source)
    j = graph.node_index(target)
    if i == j:
        return 0.0
    d = graph.distances_from(i)[j]
    return float(d / (speed_kmh / 3.6)) if np.isfinite(d) else math.inf


def snap_to_stop(zone: Zone, network) -> Zone:
    """Return ``zone`` with ``snapped_stop`` set to its nearest stop (ties: smallest stop id)."""
    if network.n_stops == 0:
        raise InputError("network has no stops")
    d = haversine_np(zone.lat, zone.lon, network.stop_lat, network.stop_lon)
    dmin = d.min()
    best = min(network.stop_ids[i] for i in np.flatnonzero(d == dmin))
    return replace(zone, snapped_stop=best, snap_distance_m=float(dmin))


def nearest_facilities(zone: Zone, facilities, kind: str, k: int = 5, return_distance=False):
    """The ``min(k, available)`` facilities of ``kind`` closest to the zone centroid, nearest first."""
    if k < 1:
        raise ValueError("k must be >= 1")
    pool = [f for f in facilities if f.kind == kind]
    if not pool:
        raise InputError(f"no facility of kind {kind!r}")
    d = haversine_np(zone.lat, zone.lon, np.array([f.lat for f in pool]), np.array([f.lon for f in pool]))
    order = sorted(range(len(pool)), key=lambda i: (d[i], pool[i].facility_id))[:k]
    if return_distance:
        return [(pool[i], float(d[i])) for i in order]
    return [pool[i] for i in order]


def _csr_from_lists(n, rows):
    ptr = np.zeros(n + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(r) for r in rows])
    to = np.array([j for r in rows for j, _ in r], dtype=np.int64)
    length = np.array([m for r in rows for _, m in r], dtype=np.float64)
    return ptr, to, length


def stop_transfers(lat, lon, walk_graph: WalkGraph | None, max_m: float):
    """Walking links between distinct stops no longer than ``max_m`` metres, as CSR arrays.

    With a walk graph a link is stop -> nearest node -> shortest path -> nearest
    node -> stop. Candidate pairs are prefiltered by straight-line distance,
    which never exceeds the walked distance when edge lengths are geometric.
    """
    n = len(lat)
    rows = [[] for _ in range(n)]
    if n == 0 or max_m <= 0:
        return _csr_from_lists(n, rows)
    pts = _unit_vectors(lat, lon)
    tree = cKDTree(pts)
    cands = tree.query_ball_point(pts, _chord(max_m) * (1 + 1e-9))
    if walk_graph is None:
        for i, js in enumerate(cands):
            js = np.array(sorted(j for j in js if j != i), dtype=np.int64)
            if js.size:
                d = haversine_np(lat[i], lon[i], lat[js], lon[js])
                rows[i] = [(int(j), float(m)) for j, m in zip(js, d) if m <= max_m]
        return _csr_from_lists(n, rows)

    node, attach = walk_graph.nearest_node(lat, lon)
    uniq = np.unique(node)
    for start in range(0, uniq.size, 256):
        chunk = uniq[start : start + 256]
        dist = walk_graph.distances_from(chunk, limit=max_m)
        row_of = {int(u): r for r, u in enumerate(chunk)}
        for i in np.flatnonzero(np.isin(node, chunk)):
            js = np.array(sorted(j for j in cands[i] if j != i), dtype=np.int64)
            if not js.size:
                continue
            d = attach[i] + dist[row_of[int(node[i])], node[js]] + attach[js]
            rows[i] = [(int(j), float(m)) for j, m in zip(js, d) if m <= max_m]
    return _csr_from_lists(n, rows)


def egress_lengths(lat, lon, stop_lat, stop_lon, walk_graph: WalkGraph | None, max_m: float):
    """Walking distance from every stop within ``max_m`` to the point ``(lat, lon)``.

    Returns ``(stop_indices, metres)``.
    """
    pt = _unit_vectors(np.array([lat]), np.array([lon]))[0]
    stop_pts = _unit_vectors(stop_lat, stop_lon)
    chord = np.linalg.norm(stop_pts - pt, axis=1)
    cand = np.flatnonzero(chord <= _chord(max_m) * (1 + 1e-9))
    if walk_graph is None:
        d = haversine_np(lat, lon, stop_lat[cand], stop_lon[cand])
    else:
        fnode, fattach = walk_graph.nearest_node(lat, lon)
        snode, sattach = walk_graph.nearest_node(stop_lat[cand], stop_lon[cand])
        dist = walk_graph.distances_from(int(fnode[0]), limit=max_m)
        d = fattach[0] + dist[snode] + sattach
    keep = d <= max_m
    return cand[keep].astype(np.int64), d[keep]
