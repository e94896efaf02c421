"""Independent reference implementations used by the test-suite.

Nothing here imports the code paths it checks: routing is re-derived as a
shortest path on an explicit time-expanded graph, walking distances are
recomputed with networkx or direct haversine, and the statistics are naive
double loops.
"""
from __future__ import annotations

import datetime as dt
import math
from bisect import bisect_left
from itertools import combinations

import networkx as nx
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from ttvaccess.gtfs import CalendarRow, RawFeed, Route, Stop, StopTime, Trip

R_EARTH = 6_371_000.0
DATE = dt.date(2024, 5, 30)


def hav(a, b):
    p1, p2 = math.radians(a[0]), math.radians(b[0])
    dp = p2 - p1
    dl = math.radians(b[1] - a[1])
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * R_EARTH * math.asin(min(1.0, math.sqrt(h)))


def walk_secs(m, speed_kmh):
    return int(math.ceil(m / (speed_kmh / 3.6) - 1e-9))


# ---------------------------------------------------------------------------
# random networks


def random_feed(rng, n_stops=30, n_routes=8, max_trips=200, overtaking=True, span_m=4000.0):
    """A random timetable on a small patch so that some stops lie within transfer range."""
    lat0, lon0 = 51.5, -0.1
    dlat = span_m / 111_195.0
    dlon = dlat / math.cos(math.radians(lat0))
    stops = [Stop(f"s{i}", "", lat0 + rng.uniform(0, dlat), lon0 + rng.uniform(0, dlon)) for i in range(n_stops)]
    routes, trips, st = [], [], []
    per_route = max(1, max_trips // n_routes)
    tid = 0
    for r in range(n_routes):
        routes.append(Route(f"r{r}", 3))
        length = int(rng.integers(2, 9))
        seq = rng.choice(n_stops, size=length, replace=False)
        base_hops = rng.integers(60, 600, size=length - 1)
        for _ in range(int(rng.integers(1, per_route + 1))):
            t = int(rng.integers(8 * 3600, 11 * 3600))
            hops = base_hops.copy()
            if overtaking and rng.random() < 0.3:
                hops = rng.integers(60, 600, size=length - 1)
            trip_id = f"t{tid}"
            tid += 1
            trips.append(Trip(trip_id, f"r{r}", "WK"))
            for i, s in enumerate(seq):
                arr = t
                dwell = int(rng.integers(0, 3)) * 30
                st.append(StopTime(trip_id, i + 1, arr, arr + dwell, f"s{s}"))
                if i < length - 1:
                    t = arr + dwell + int(hops[i])
    cal = [CalendarRow("WK", (True,) * 5 + (False, False), dt.date(2024, 1, 1), dt.date(2024, 12, 31))]
    return RawFeed(stops, routes, trips, st, cal, [])


def random_walk_graph(rng, feed, n_nodes=60, radius_m=900.0):
    """Random geometric pedestrian graph over the feed's bounding box; edges >= straight line."""
    lat = np.array([s.lat for s in feed.stops])
    lon = np.array([s.lon for s in feed.stops])
    nodes = [(f"n{i}", rng.uniform(lat.min(), lat.max()), rng.uniform(lon.min(), lon.max())) for i in range(n_nodes)]
    edges = []
    for a, b in combinations(range(n_nodes), 2):
        d = hav(nodes[a][1:], nodes[b][1:])
        if d <= radius_m and rng.random() < 0.7:
            edges.append((nodes[a][0], nodes[b][0], round(d * rng.uniform(1.0, 1.3) + 0.01, 3)))
    return nodes, edges


class WalkOracle:
    """Walking distances recomputed from scratch (networkx Dijkstra or straight line)."""

    def __init__(self, stops, nodes=None, edges=None):
        self.stops = [(s.lat, s.lon) for s in stops]
        self.nodes = nodes
        if nodes is not None:
            g = nx.Graph()
            g.add_nodes_from(n[0] for n in nodes)
            for a, b, m in edges:
                if g.has_edge(a, b):
                    m = min(m, g[a][b]["weight"])
                g.add_edge(a, b, weight=m)
            self.g = g
            self.stop_attach = [self._attach(p) for p in self.stops]

    def _attach(self, p):
        best = min(self.nodes, key=lambda n: (hav(p, n[1:]), n[0]))
        return best[0], hav(p, best[1:])

    def between(self, p_attach, q_attach, limit):
        (na, da), (nb, db) = p_attach, q_attach
        if na == nb:
            return da + db
        try:
            d = nx.dijkstra_path_length(self.g, na, nb)
        except nx.NetworkXNoPath:
            return math.inf
        return da + d + db

    def transfers(self, max_m):
        out = {}
        for i, p in enumerate(self.stops):
            for j, q in enumerate(self.stops):
                if i == j:
                    continue
                if self.nodes is None:
                    d = hav(p, q)
                else:
                    if hav(p, q) > max_m:
                        continue
                    d = self.between(self.stop_attach[i], self.stop_attach[j], max_m)
                if d <= max_m:
                    out[(i, j)] = d
        return out

    def egress(self, point, max_m):
        out = {}
        if self.nodes is not None:
            pa = self._attach(point)
        for i, p in enumerate(self.stops):
            if self.nodes is None:
                d = hav(p, point)
            else:
                if hav(p, point) > max_m:
                    continue
                d = self.between(self.stop_attach[i], pa, max_m)
            if d <= max_m:
                out[i] = d
        return out


# ---------------------------------------------------------------------------
# time-expanded graph


class TimeExpandedOracle:
    """Earliest arrival as a shortest path on an explicit time-expanded graph.

    Nodes per ride layer ``k`` (rides used so far):
      B(s, e)     waiting at stop s at its e-th distinct departure instant
      T(trip, i)  on board ``trip`` as it leaves position i
      A(trip, i)  on board ``trip`` as it reaches position i
    Edges: wait B->B, board B_k->T_{k+1}, ride T->A, stay A->T,
    alight-and-wait A->B(same stop), alight-and-walk A->B(other stop),
    alight-and-finish A->DEST. The origin enters B nodes of layer 0 (directly
    or after one walk) or walks straight to the destination.
    """

    def __init__(self, feed, service_date, transfers_m, walk_speed, max_rides, max_walk):
        active = feed.active_services(service_date)
        self.stop_idx = {s.stop_id: i for i, s in enumerate(feed.stops)}
        trips = {t.trip_id for t in feed.trips if t.service_id in active}
        rows = {}
        for r in feed.stop_times:
            if r.trip_id in trips:
                rows.setdefault(r.trip_id, []).append(r)
        self.trips = []
        for tid in sorted(rows):
            rs = sorted(rows[tid], key=lambda r: r.stop_sequence)
            if len(rs) >= 2:
                self.trips.append([(self.stop_idx[r.stop_id], r.arrival, r.departure) for r in rs])
        n_stops = len(feed.stops)
        self.n_stops = n_stops
        self.speed = walk_speed
        self.max_rides = max_rides
        self.max_walk = max_walk
        self.transfers = {}
        for (i, j), m in transfers_m.items():
            s = walk_secs(m, walk_speed)
            if s <= max_walk:
                self.transfers.setdefault(i, []).append((j, s))

        boardable = [set() for _ in range(n_stops)]
        for trip in self.trips:
            for s, _, dep in trip[:-1]:
                boardable[s].add(dep)
        self.events = [sorted(b) for b in boardable]
        ids = {}

        def nid(key):
            if key not in ids:
                ids[key] = len(ids)
            return ids[key]

        self.ids = ids
        edges = []
        for k in range(max_rides + 1):
            for s in range(n_stops):
                ev = self.events[s]
                for e in range(len(ev) - 1):
                    edges.append((nid(("B", k, s, e)), nid(("B", k, s, e + 1)), ev[e + 1] - ev[e]))
            for t, trip in enumerate(self.trips):
                for i, (s, arr, dep) in enumerate(trip):
                    if k < max_rides and i < len(trip) - 1:
                        e = bisect_left(self.events[s], dep)
                        edges.append((nid(("B", k, s, e)), nid(("T", k + 1, t, i)), 0))
                    if k == 0:
                        continue
                    if i < len(trip) - 1:
                        edges.append((nid(("T", k, t, i)), nid(("A", k, t, i + 1)), trip[i + 1][1] - dep))
                    if i > 0:
                        edges.append((nid(("A", k, t, i)), nid(("T", k, t, i)), dep - arr))
                        for s2, w in [(s, 0)] + self.transfers.get(s, []):
                            e = bisect_left(self.events[s2], arr + w)
                            if e < len(self.events[s2]):
                                edges.append((nid(("A", k, t, i)), nid(("B", k, s2, e)),
                                              self.events[s2][e] - arr))
        self.n_core = len(ids)
        self.core_edges = edges
        self.dest_cache = {}

    def _dest_distances(self, egress):
        """Distance from every node to DEST (egress: stop -> walk seconds)."""
        key = tuple(sorted(egress.items()))
        if key in self.dest_cache:
            return self.dest_cache[key]
        dest = self.n_core
        edges = list(self.core_edges)
        for k in range(1, self.max_rides + 1):
            for t, trip in enumerate(self.trips):
                for i, (s, arr, dep) in enumerate(trip):
                    if i > 0 and s in egress:
                        edges.append((self.ids[("A", k, t, i)], dest, egress[s]))
        n = self.n_core + 1
        # keep the lighter of duplicate edges; csr construction would add them up
        lightest = {}
        for a, b, w in edges:
            if lightest.get((a, b), math.inf) > w:
                lightest[(a, b)] = w
        u = np.array([a for a, _ in lightest], dtype=np.int64)
        v = np.array([b for _, b in lightest], dtype=np.int64)
        w = np.array(list(lightest.values()), dtype=float)
        # zero-weight edges would vanish from a sparse matrix; add a tiny epsilon per hop
        # and round the path length back to whole seconds
        eps = 1e-6
        g = csr_matrix((w + eps, (v, u)), shape=(n, n))  # reversed graph
        dist = dijkstra(g, directed=True, indices=dest)
        self.dest_cache[key] = dist
        return dist

    def earliest_arrival(self, origin, t0, egress_m, max_duration):
        egress = {}
        for s, m in egress_m.items():
            sec = walk_secs(m, self.speed)
            if sec <= self.max_walk:
                egress[s] = sec
        dist = self._dest_distances(egress)
        best = math.inf
        if origin in egress:
            best = t0 + egress[origin]
        for s2, w in [(origin, 0)] + self.transfers.get(origin, []):
            e = bisect_left(self.events[s2], t0 + w)
            if e >= len(self.events[s2]):
                continue
            node = self.ids.get(("B", 0, s2, e))
            if node is None:
                continue
            d = dist[node]
            if np.isfinite(d):
                best = min(best, self.events[s2][e] + int(round(d)))
        if best - t0 > max_duration:
            return math.inf
        return best


# ---------------------------------------------------------------------------
# statistics


def gini_pairwise(x):
    x = np.asarray(x, dtype=float)
    n = x.size
    mean = x.mean()
    if mean == 0:
        return 0.0
    total = 0.0
    for a in x:
        for b in x:
            total += abs(a - b)
    return total / (2 * n * n * mean)


def moran_double_loop(x, w_dense):
    x = np.asarray(x, dtype=float)
    n = x.size
    xb = sum(x) / n
    num = 0.0
    s0 = 0.0
    for i in range(n):
        for j in range(n):
            num += w_dense[i][j] * (x[i] - xb) * (x[j] - xb)
            s0 += w_dense[i][j]
    den = sum((xi - xb) ** 2 for xi in x)
    return n * num / (den * s0)


def fdr_brute(p):
    m = len(p)
    order = sorted(range(m), key=lambda i: (p[i], i))
    out = [0.0] * m
    for rank_i, i in enumerate(order, start=1):
        out[i] = min(min(1.0, p[order[j - 1]] * m / j) for j in range(rank_i, m + 1))
    return out


def knn_brute(points, k):
    out = []
    for i, p in enumerate(points):
        d = sorted((hav(p, q), j) for j, q in enumerate(points) if j != i)
        out.append([j for _, j in d[:k]])
    return out


def avg_rank_pct(values):
    """(average rank - 1) / (n - 1) by counting, no sorting library."""
    n = len(values)
    out = []
    for v in values:
        less = sum(1 for u in values if u < v)
        equal = sum(1 for u in values if u == v)
        rank = less + (equal + 1) / 2.0
        out.append((rank - 1) / (n - 1))
    return out


# ---------------------------------------------------------------------------
# hand-built fixtures


def north_of(lat, lon, metres):
    """Point ``metres`` due north of (lat, lon) on the haversine sphere."""
    return lat + math.degrees(metres / R_EARTH), lon


def timetable_feed(stops, trips):
    """``stops``: {id: (lat, lon)}; ``trips``: {trip_id: [(stop_id, arr, dep), ...]} (one route each)."""
    st = [Stop(k, "", lat, lon) for k, (lat, lon) in stops.items()]
    routes, tr, rows = [], [], []
    for tid, calls in trips.items():
        routes.append(Route("R" + tid, 3))
        tr.append(Trip(tid, "R" + tid, "WK"))
        for i, (s, arr, dep) in enumerate(calls):
            rows.append(StopTime(tid, i + 1, arr, dep, s))
    cal = [CalendarRow("WK", (True,) * 7, dt.date(2024, 1, 1), dt.date(2024, 12, 31))]
    return RawFeed(st, routes, tr, rows, cal, [])
