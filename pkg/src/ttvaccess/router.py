"""Timetable routing: RAPTOR earliest arrival, departure-window percentiles, hourly minima.

Journey model
-------------
A journey starts *at* the origin stop (no access walk), alternates rides and
at most one walking transfer between consecutive rides, and ends with one
walk from the last alighting stop (or the origin stop itself) to the
destination point. Walking legs are whole seconds, rounded up. A journey is
admissible when it boards at most ``max_rides`` vehicles, every walking leg
lasts at most ``max_walk_duration`` and the total elapsed time is at most
``max_duration``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .geometry import egress_lengths

UNREACHABLE = math.inf


def is_unreachable(value) -> bool:
    return value is None or not math.isfinite(value)


@dataclass(frozen=True)
class QueryConfig:
    departure: int = 9 * 3600
    window: int = 600
    percentile: int = 50
    max_duration: int = 7200
    max_rides: int = 8
    walk_speed: float = 3.6  # km/h
    max_walk_duration: int = 7200

    def __post_init__(self):
        if self.window < 60:
            raise ValueError("window must be at least 60 s")
        if not 1 <= self.percentile <= 100:
            raise ValueError("percentile must lie in [1, 100]")
        for name in ("max_duration", "max_rides", "walk_speed", "max_walk_duration"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def minutes(self):
        """Departure offsets sampled inside the window (one per whole minute)."""
        return list(range(0, self.window, 60))


class TravelTimeResult(NamedTuple):
    seconds: float  # UNREACHABLE when no admissible journey
    rides_used: int  # -1 when unreachable
    provenance: int  # departure second that produced the reported value

    @property
    def reachable(self):
        return math.isfinite(self.seconds)


def walk_seconds(metres, speed_kmh):
    """Walking duration in whole seconds, rounded up."""
    secs = np.asarray(metres, dtype=np.float64) / (speed_kmh / 3.6)
    return np.ceil(secs - 1e-9).astype(np.int64)


def nearest_rank(values, percentile):
    """Index (into ``values``) of the nearest-rank percentile; ties resolve to the earliest index."""
    n = len(values)
    rank = max(1, math.ceil(percentile / 100.0 * n))
    order = sorted(range(n), key=lambda i: (values[i], i))
    return order[rank - 1]


def _point(dest):
    if hasattr(dest, "lat"):
        return float(dest.lat), float(dest.lon)
    return float(dest[0]), float(dest[1])


class Router:
    """Query engine over one :class:`TransitNetwork`; cheap to share between threads once prepared."""

    def __init__(self, network, walk_graph=None, cfg: QueryConfig | None = None, kernel=None):
        self.network = network
        self.walk_graph = walk_graph
        self.cfg = cfg or QueryConfig()
        self.kernel = kernel or _kernels.raptor
        self._egress = {}

        secs = walk_seconds(network.transfer_m, self.cfg.walk_speed)
        keep = secs <= self.cfg.max_walk_duration
        src = np.repeat(np.arange(network.n_stops), np.diff(network.transfer_ptr))
        ptr = np.zeros(network.n_stops + 1, dtype=np.int64)
        ptr[1:] = np.cumsum(np.bincount(src[keep], minlength=network.n_stops))
        self._tr = (ptr, network.transfer_to[keep].astype(np.int64), secs[keep])

    def egress(self, dest):
        """``(stop indices, walk seconds)`` of stops from which ``dest`` can be walked to."""
        key = _point(dest)
        hit = self._egress.get(key)
        if hit is None:
            cfg = self.cfg
            # slack so that the whole-second check below, not float noise in metres, decides
            max_m = cfg.max_walk_duration * cfg.walk_speed / 3.6 + 1e-6
            stops, metres = egress_lengths(key[0], key[1], self.network.stop_lat, self.network.stop_lon,
                                           self.walk_graph, max_m)
            secs = walk_seconds(metres, cfg.walk_speed)
            keep = secs <= cfg.max_walk_duration
            hit = (stops[keep], secs[keep])
            self._egress[key] = hit
        return hit

    def prepare(self, dests):
        for d in dests:
            self.egress(d)

    def stop_arrivals(self, origin: int, depart_at: int):
        """Earliest arrival at every stop by ride (or at the origin), plus rides used."""
        a = self.network.arrays
        ptr, to, secs = self._tr
        return self.kernel(
            np.int64(origin), np.int64(depart_at), np.int64(depart_at + self.cfg.max_duration),
            np.int64(self.cfg.max_rides),
            a["pat_stop_ptr"], a["pat_stops"], a["pat_trip_ptr"], a["pat_time_ptr"], a["arr"], a["dep"],
            a["sp_ptr"], a["sp_pat"], a["sp_pos"], ptr, to, secs,
        )

    def _finish(self, best, rides, dest, depart_at):
        stops, secs = self.egress(dest)
        if stops.size == 0:
            return UNREACHABLE, -1
        cand = best[stops] + secs
        i = int(np.argmin(cand))
        arrival = int(cand[i])
        if best[stops[i]] >= _kernels.INF_TIME or arrival - depart_at > self.cfg.max_duration:
            return UNREACHABLE, -1
        return float(arrival), int(rides[stops[i]])

    def _origin(self, origin_stop):
        return self.network.stop_index[origin_stop] if isinstance(origin_stop, str) else int(origin_stop)

    def earliest_arrival(self, origin_stop, dest, depart_at: int) -> float:
        best, rides = self.stop_arrivals(self._origin(origin_stop), depart_at)
        return self._finish(best, rides, dest, depart_at)[0]

    def earliest_arrival_rides(self, origin_stop, dest, depart_at: int):
        best, rides = self.stop_arrivals(self._origin(origin_stop), depart_at)
        return self._finish(best, rides, dest, depart_at)

    def profile(self, origin_stop, dests, departure: int | None = None):
        """Window percentile travel time to each destination, one RAPTOR run per sampled minute."""
        cfg = self.cfg
        departure = cfg.departure if departure is None else departure
        origin = self._origin(origin_stop)
        samples = [[] for _ in dests]
        for off in cfg.minutes:
            m = departure + off
            best, rides = self.stop_arrivals(origin, m)
            for d, dest in enumerate(dests):
                arrival, r = self._finish(best, rides, dest, m)
                samples[d].append((arrival - m, r, m))
        out = []
        for s in samples:
            i = nearest_rank([x[0] for x in s], cfg.percentile)
            value, r, m = s[i]
            if not math.isfinite(value) or value > cfg.max_duration:
                out.append(TravelTimeResult(UNREACHABLE, -1, m))
            else:
                out.append(TravelTimeResult(float(value), r, m))
        return out

    def travel_time_percentile(self, origin_stop, dest, departure: int | None = None) -> TravelTimeResult:
        return self.profile(origin_stop, [dest], departure)[0]

    def hourly_travel_times(self, origin_stop, facilities, hours):
        """Per departure hour, the best window-percentile travel time over ``facilities``."""
        out = np.full(len(hours), UNREACHABLE)
        for h, dep in enumerate(hours):
            res = self.profile(origin_stop, facilities, dep)
            vals = [r.seconds for r in res]
            out[h] = min(vals) if vals else UNREACHABLE
        return out


def earliest_arrival(network, walk_graph, origin_stop, dest_point, depart_at, cfg: QueryConfig | None = None):
    return Router(network, walk_graph, cfg).earliest_arrival(origin_stop, dest_point, depart_at)


def travel_time_percentile(network, walk_graph, origin_stop, dest_point, cfg: QueryConfig | None = None):
    return Router(network, walk_graph, cfg).travel_time_percentile(origin_stop, dest_point)


def hourly_travel_times(network, walk_graph, zone, facilities, hours, cfg: QueryConfig | None = None):
    if not facilities:
        raise ValueError("at least one candidate facility is required")
    return Router(network, walk_graph, cfg).hourly_travel_times(zone.snapped_stop, facilities, hours)
