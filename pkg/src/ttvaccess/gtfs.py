"""GTFS ingestion: parse a feed directory, validate it, and index one service day."""
from __future__ import annotations

import csv
import datetime as dt
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DanglingReferenceError, GTFSError, NoServiceError

REQUIRED_FILES = ("stops.txt", "routes.txt", "trips.txt", "stop_times.txt")
CALENDAR_FILES = ("calendar.txt", "calendar_dates.txt")
WEEKDAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")

TIME_PATTERN = re.compile(r"^\s*(\d{1,3}):([0-5]\d):([0-5]\d)\s*$")


class Stop(NamedTuple):
    stop_id: str
    name: str
    lat: float
    lon: float


class Route(NamedTuple):
    route_id: str
    mode: int


class Trip(NamedTuple):
    trip_id: str
    route_id: str
    service_id: str


class StopTime(NamedTuple):
    trip_id: str
    stop_sequence: int
    arrival: int
    departure: int
    stop_id: str


class CalendarRow(NamedTuple):
    service_id: str
    days: tuple  # seven booleans, Monday first
    start: dt.date
    end: dt.date


class CalendarDate(NamedTuple):
    service_id: str
    date: dt.date
    exception_type: int  # 1 added, 2 removed


@dataclass
class RawFeed:
    stops: list
    routes: list
    trips: list
    stop_times: list
    calendar: list = field(default_factory=list)
    calendar_dates: list = field(default_factory=list)

    def active_services(self, date: dt.date) -> set:
        active = set()
        weekday = date.weekday()
        for row in self.calendar:
            if row.start <= date <= row.end and row.days[weekday]:
                active.add(row.service_id)
        for row in self.calendar_dates:
            if row.date != date:
                continue
            if row.exception_type == 1:
                active.add(row.service_id)
            else:
                active.discard(row.service_id)
        return active


def parse_time(value: str) -> int:
    """Parse a GTFS ``H:MM:SS`` time into seconds after midnight (may exceed 86400)."""
    m = TIME_PATTERN.match(value)
    if not m:
        raise ValueError(f"invalid time {value!r}")
    h, mi, s = (int(g) for g in m.groups())
    return h * 3600 + mi * 60 + s


def format_time(seconds: int) -> str:
    h, rem = divmod(int(seconds), 3600)
    return f"{h:02d}:{rem // 60:02d}:{rem % 60:02d}"


def parse_date(value: str) -> dt.date:
    return dt.datetime.strptime(value.strip(), "%Y%m%d").date()


def _read_table(path: Path, required: tuple):
    """Yield ``(line_number, row_dict)``; header columns in ``required`` must exist."""
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise GTFSError("missing header row", file=path.name)
        header = [c.strip() for c in reader.fieldnames]
        reader.fieldnames = header
        for col in required:
            if col not in header:
                raise GTFSError(f"missing required column '{col}'", file=path.name, line=1, column=col)
        for row in reader:
            yield reader.line_num, {k: (v.strip() if isinstance(v, str) else v) for k, v in row.items()}


def _cell(row, col, fname, line, convert=str, optional=False):
    raw = row.get(col)
    if raw is None or raw == "":
        if optional:
            return None
        raise GTFSError("empty required value", file=fname, line=line, column=col)
    try:
        return convert(raw)
    except ValueError as exc:
        raise GTFSError(str(exc), file=fname, line=line, column=col) from None


def parse_feed(directory) -> RawFeed:
    """Read and validate a GTFS directory.

    Raises :class:`GTFSError` for missing files or malformed cells and
    :class:`DanglingReferenceError` for foreign keys that point nowhere.
    """
    root = Path(directory)
    if not root.is_dir():
        raise GTFSError(f"not a directory: {root}")
    for name in REQUIRED_FILES:
        if not (root / name).is_file():
            raise GTFSError(f"missing required file {name}", file=name)
    if not any((root / name).is_file() for name in CALENDAR_FILES):
        raise GTFSError("feed needs calendar.txt and/or calendar_dates.txt")
    freq = root / "frequencies.txt"
    if freq.is_file() and any(True for _ in _read_table(freq, ())):
        raise GTFSError("headway-based trips (frequencies.txt) are not supported", file="frequencies.txt")

    stops = []
    for line, row in _read_table(root / "stops.txt", ("stop_id", "stop_lat", "stop_lon")):
        lat = _cell(row, "stop_lat", "stops.txt", line, float)
        lon = _cell(row, "stop_lon", "stops.txt", line, float)
        if not -90.0 <= lat <= 90.0:
            raise GTFSError(f"latitude {lat} out of range", file="stops.txt", line=line, column="stop_lat")
        if not -180.0 <= lon <= 180.0:
            raise GTFSError(f"longitude {lon} out of range", file="stops.txt", line=line, column="stop_lon")
        stops.append(Stop(_cell(row, "stop_id", "stops.txt", line), row.get("stop_name") or "", lat, lon))

    routes = [
        Route(_cell(row, "route_id", "routes.txt", line), _cell(row, "route_type", "routes.txt", line, int))
        for line, row in _read_table(root / "routes.txt", ("route_id", "route_type"))
    ]
    trips = [
        Trip(
            _cell(row, "trip_id", "trips.txt", line),
            _cell(row, "route_id", "trips.txt", line),
            _cell(row, "service_id", "trips.txt", line),
        )
        for line, row in _read_table(root / "trips.txt", ("route_id", "service_id", "trip_id"))
    ]

    stop_times = []
    st_lines = []
    cols = ("trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence")
    for line, row in _read_table(root / "stop_times.txt", cols):
        arr = _cell(row, "arrival_time", "stop_times.txt", line, parse_time, optional=True)
        dep = _cell(row, "departure_time", "stop_times.txt", line, parse_time, optional=True)
        if arr is None and dep is None:
            raise GTFSError("untimed stop_times rows are not supported", file="stop_times.txt", line=line,
                            column="arrival_time")
        arr = dep if arr is None else arr
        dep = arr if dep is None else dep
        stop_times.append(
            StopTime(
                _cell(row, "trip_id", "stop_times.txt", line),
                _cell(row, "stop_sequence", "stop_times.txt", line, int),
                arr,
                dep,
                _cell(row, "stop_id", "stop_times.txt", line),
            )
        )
        st_lines.append(line)

    calendar = []
    if (root / "calendar.txt").is_file():
        for line, row in _read_table(root / "calendar.txt", ("service_id", *WEEKDAYS, "start_date", "end_date")):
            days = tuple(_cell(row, d, "calendar.txt", line, int) == 1 for d in WEEKDAYS)
            calendar.append(
                CalendarRow(
                    _cell(row, "service_id", "calendar.txt", line),
                    days,
                    _cell(row, "start_date", "calendar.txt", line, parse_date),
                    _cell(row, "end_date", "calendar.txt", line, parse_date),
                )
            )
    calendar_dates = []
    if (root / "calendar_dates.txt").is_file():
        for line, row in _read_table(root / "calendar_dates.txt", ("service_id", "date", "exception_type")):
            et = _cell(row, "exception_type", "calendar_dates.txt", line, int)
            if et not in (1, 2):
                raise GTFSError(f"exception_type must be 1 or 2, got {et}", file="calendar_dates.txt",
                                line=line, column="exception_type")
            calendar_dates.append(
                CalendarDate(
                    _cell(row, "service_id", "calendar_dates.txt", line),
                    _cell(row, "date", "calendar_dates.txt", line, parse_date),
                    et,
                )
            )

    feed = RawFeed(stops, routes, trips, stop_times, calendar, calendar_dates)
    validate_feed(feed, st_lines)
    return feed


def validate_feed(feed: RawFeed, stop_time_lines=None):
    """Check keys, references and per-trip time ordering; raise on the first problem."""

    def unique(rows, attr, fname):
        seen = set()
        for row in rows:
            key = getattr(row, attr)
            if key in seen:
                raise GTFSError(f"duplicate {attr} '{key}'", file=fname, column=attr)
            seen.add(key)
        return seen

    stop_ids = unique(feed.stops, "stop_id", "stops.txt")
    route_ids = unique(feed.routes, "route_id", "routes.txt")
    trip_ids = unique(feed.trips, "trip_id", "trips.txt")
    service_ids = {r.service_id for r in feed.calendar} | {r.service_id for r in feed.calendar_dates}

    for trip in feed.trips:
        if trip.route_id not in route_ids:
            raise DanglingReferenceError(f"trip '{trip.trip_id}' references unknown route '{trip.route_id}'",
                                         trip.route_id, file="trips.txt", column="route_id")
        if trip.service_id not in service_ids:
            raise DanglingReferenceError(
                f"trip '{trip.trip_id}' references unknown service '{trip.service_id}'",
                trip.service_id, file="trips.txt", column="service_id")

    lines = stop_time_lines or [None] * len(feed.stop_times)
    by_trip = defaultdict(list)
    for line, st in zip(lines, feed.stop_times):
        if st.trip_id not in trip_ids:
            raise DanglingReferenceError(f"stop_times references unknown trip '{st.trip_id}'", st.trip_id,
                                         file="stop_times.txt", line=line, column="trip_id")
        if st.stop_id not in stop_ids:
            raise DanglingReferenceError(f"stop_times references unknown stop '{st.stop_id}'", st.stop_id,
                                         file="stop_times.txt", line=line, column="stop_id")
        if st.departure < st.arrival:
            raise GTFSError(f"departure before arrival in trip '{st.trip_id}'", file="stop_times.txt",
                            line=line, column="departure_time")
        by_trip[st.trip_id].append((st, line))

    for trip_id, rows in by_trip.items():
        rows.sort(key=lambda r: r[0].stop_sequence)
        for (prev, _), (cur, line) in zip(rows, rows[1:]):
            if cur.stop_sequence == prev.stop_sequence:
                raise GTFSError(f"repeated stop_sequence {cur.stop_sequence} in trip '{trip_id}'",
                                file="stop_times.txt", line=line, column="stop_sequence")
            if cur.arrival < prev.departure:
                raise GTFSError(f"trip '{trip_id}' arrives before leaving the previous stop",
                                file="stop_times.txt", line=line, column="arrival_time")


@dataclass(frozen=True)
class Pattern:
    """Trips sharing one stop sequence that never overtake each other."""

    route_id: str
    stops: np.ndarray  # stop indices, int64
    trip_ids: tuple
    sequences: np.ndarray  # (n_trips, n_pos) original stop_sequence values
    arrivals: np.ndarray  # (n_trips, n_pos) seconds
    departures: np.ndarray

    @property
    def n_trips(self):
        return len(self.trip_ids)


@dataclass(frozen=True)
class TransitNetwork:
    stop_ids: tuple
    stop_lat: np.ndarray
    stop_lon: np.ndarray
    patterns: tuple
    service_date: dt.date
    # walking links between distinct stops, CSR over stop index, lengths in metres
    transfer_ptr: np.ndarray
    transfer_to: np.ndarray
    transfer_m: np.ndarray
    stop_index: dict = field(repr=False, compare=False, default=None)
    arrays: dict = field(repr=False, compare=False, default=None)

    @property
    def n_stops(self):
        return len(self.stop_ids)

    def stop_time_rows(self):
        """Serialise the retained trips back into :class:`StopTime` rows (trip, sequence order)."""
        rows = []
        for pat in self.patterns:
            for t, trip_id in enumerate(pat.trip_ids):
                for pos, s in enumerate(pat.stops):
                    rows.append(StopTime(trip_id, int(pat.sequences[t, pos]), int(pat.arrivals[t, pos]),
                                         int(pat.departures[t, pos]), self.stop_ids[s]))
        rows.sort(key=lambda r: (r.trip_id, r.stop_sequence))
        return rows


def _dominates(a_arr, a_dep, b_arr, b_dep):
    return bool(np.all(a_arr <= b_arr) and np.all(a_dep <= b_dep))


def split_fifo(trips):
    """Partition ``(key, arrivals, departures)`` triples into non-overtaking groups.

    Trips are taken in order of first departure and each joins the first
    group whose latest trip it never overtakes.
    """
    ordered = sorted(trips, key=lambda t: (int(t[2][0]), int(t[1][0]), tuple(t[2]), tuple(t[1]), t[0]))
    groups = []
    for trip in ordered:
        for g in groups:
            last = g[-1]
            if _dominates(last[1], last[2], trip[1], trip[2]):
                g.append(trip)
                break
        else:
            groups.append([trip])
    return groups


def build_network(feed: RawFeed, service_date: dt.date, walk_graph=None, max_transfer_m: float = 1000.0):
    """Index the trips running on ``service_date`` into FIFO route patterns.

    Walking transfers between stops up to ``max_transfer_m`` are measured on
    ``walk_graph`` when given, otherwise as straight-line distance.
    """
    from .geometry import stop_transfers

    active = feed.active_services(service_date)
    trips = {t.trip_id: t for t in feed.trips if t.service_id in active}
    if not trips:
        raise NoServiceError(f"no service is active on {service_date.isoformat()}")

    stop_ids = tuple(s.stop_id for s in feed.stops)
    stop_index = {s: i for i, s in enumerate(stop_ids)}
    lat = np.array([s.lat for s in feed.stops], dtype=np.float64)
    lon = np.array([s.lon for s in feed.stops], dtype=np.float64)

    rows_by_trip = defaultdict(list)
    for st in feed.stop_times:
        if st.trip_id in trips:
            rows_by_trip[st.trip_id].append(st)

    by_sequence = defaultdict(list)
    for trip_id, rows in rows_by_trip.items():
        if len(rows) < 2:
            continue
        rows.sort(key=lambda r: r.stop_sequence)
        key = (trips[trip_id].route_id, tuple(stop_index[r.stop_id] for r in rows))
        by_sequence[key].append(
            (
                trip_id,
                np.array([r.arrival for r in rows], dtype=np.int64),
                np.array([r.departure for r in rows], dtype=np.int64),
                np.array([r.stop_sequence for r in rows], dtype=np.int64),
            )
        )
    if not by_sequence:
        raise NoServiceError(f"no timetabled trips run on {service_date.isoformat()}")

    patterns = []
    for (route_id, seq) in sorted(by_sequence, key=lambda k: (k[0], [stop_ids[i] for i in k[1]])):
        entries = {e[0]: e for e in by_sequence[(route_id, seq)]}
        for group in split_fifo([(e[0], e[1], e[2]) for e in entries.values()]):
            ids = tuple(g[0] for g in group)
            patterns.append(
                Pattern(
                    route_id=route_id,
                    stops=np.array(seq, dtype=np.int64),
                    trip_ids=ids,
                    sequences=np.stack([entries[i][3] for i in ids]),
                    arrivals=np.stack([entries[i][1] for i in ids]),
                    departures=np.stack([entries[i][2] for i in ids]),
                )
            )

    ptr, to, length = stop_transfers(lat, lon, walk_graph, max_transfer_m)
    net = TransitNetwork(
        stop_ids=stop_ids,
        stop_lat=lat,
        stop_lon=lon,
        patterns=tuple(patterns),
        service_date=service_date,
        transfer_ptr=ptr,
        transfer_to=to,
        transfer_m=length,
        stop_index=stop_index,
    )
    object.__setattr__(net, "arrays", _flatten(net))
    return net


def _flatten(net: TransitNetwork) -> dict:
    pats = net.patterns
    pat_stop_ptr = np.zeros(len(pats) + 1, dtype=np.int64)
    pat_trip_ptr = np.zeros(len(pats) + 1, dtype=np.int64)
    pat_time_ptr = np.zeros(len(pats) + 1, dtype=np.int64)
    for i, p in enumerate(pats):
        pat_stop_ptr[i + 1] = pat_stop_ptr[i] + len(p.stops)
        pat_trip_ptr[i + 1] = pat_trip_ptr[i] + p.n_trips
        pat_time_ptr[i + 1] = pat_time_ptr[i] + p.arrivals.size
    empty = np.empty(0, dtype=np.int64)
    pat_stops = np.concatenate([p.stops for p in pats]) if pats else empty
    arr = np.concatenate([p.arrivals.ravel() for p in pats]) if pats else empty
    dep = np.concatenate([p.departures.ravel() for p in pats]) if pats else empty

    occ = [[] for _ in range(net.n_stops)]
    for pi, p in enumerate(pats):
        for pos, s in enumerate(p.stops):
            occ[s].append((pi, pos))
    sp_ptr = np.zeros(net.n_stops + 1, dtype=np.int64)
    sp_ptr[1:] = np.cumsum([len(o) for o in occ])
    sp_pat = np.array([pi for o in occ for pi, _ in o], dtype=np.int64)
    sp_pos = np.array([pos for o in occ for _, pos in o], dtype=np.int64)
    return dict(
        pat_stop_ptr=pat_stop_ptr,
        pat_stops=pat_stops.astype(np.int64),
        pat_trip_ptr=pat_trip_ptr,
        pat_time_ptr=pat_time_ptr,
        arr=arr.astype(np.int64),
        dep=dep.astype(np.int64),
        sp_ptr=sp_ptr,
        sp_pat=sp_pat,
        sp_pos=sp_pos,
    )


def write_feed(feed: RawFeed, directory):
    """Write ``feed`` as a GTFS directory (used by the synthetic city generator and tests)."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)

    def dump(name, header, rows):
        with open(root / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    dump("stops.txt", ["stop_id", "stop_name", "stop_lat", "stop_lon"],
         [(s.stop_id, s.name, repr(s.lat), repr(s.lon)) for s in feed.stops])
    dump("routes.txt", ["route_id", "route_short_name", "route_type"],
         [(r.route_id, r.route_id, r.mode) for r in feed.routes])
    dump("trips.txt", ["route_id", "service_id", "trip_id"],
         [(t.route_id, t.service_id, t.trip_id) for t in feed.trips])
    dump("stop_times.txt", ["trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence"],
         [(s.trip_id, format_time(s.arrival), format_time(s.departure), s.stop_id, s.stop_sequence)
          for s in feed.stop_times])
    if feed.calendar:
        dump("calendar.txt", ["service_id", *WEEKDAYS, "start_date", "end_date"],
             [(c.service_id, *(int(d) for d in c.days), c.start.strftime("%Y%m%d"), c.end.strftime("%Y%m%d"))
              for c in feed.calendar])
    if feed.calendar_dates:
        dump("calendar_dates.txt", ["service_id", "date", "exception_type"],
             [(c.service_id, c.date.strftime("%Y%m%d"), c.exception_type) for c in feed.calendar_dates])
