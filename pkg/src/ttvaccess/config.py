"""Run configuration: a flat TOML file of key = value pairs."""
from __future__ import annotations

import datetime as dt
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import InputError
from .router import QueryConfig

PATH_KEYS = ("gtfs_dir", "zones", "facilities", "walk_nodes", "walk_edges", "deprivation", "lookup")
DEFAULT_HOURS = tuple(h * 3600 for h in range(9, 18))


def parse_clock(value) -> int:
    """``"09:30"`` / ``"09:30:00"`` / seconds -> seconds after midnight."""
    if isinstance(value, int):
        return value
    parts = [int(p) for p in str(value).split(":")]
    if len(parts) == 2:
        parts.append(0)
    if len(parts) != 3:
        raise ValueError(f"bad clock time {value!r}")
    return parts[0] * 3600 + parts[1] * 60 + parts[2]


def clock_label(seconds: int) -> str:
    h, rem = divmod(seconds, 3600)
    m = rem // 60
    return f"{h:02d}" if m == 0 else f"{h:02d}{m:02d}"


@dataclass
class RunConfig:
    gtfs_dir: Path
    zones: Path
    facilities: Path
    service_date: dt.date
    walk_nodes: Path | None = None
    walk_edges: Path | None = None
    deprivation: Path | None = None
    lookup: Path | None = None
    hours: tuple = DEFAULT_HOURS
    kinds: tuple = ("hospital", "GP")
    k_facilities: int = 5
    window: int = 600
    percentile: int = 50
    max_duration: int = 7200
    max_rides: int = 8
    walk_speed: float = 3.6
    max_walk_duration: int = 7200
    max_transfer_m: float = 1000.0
    knn_k: int = 10
    row_standardize: bool = False
    n_perm: int = 999
    alpha: float = 0.05
    quantile_threshold: float = 0.30
    seed: int = 0
    workers: int = field(default=1, compare=False)

    def __post_init__(self):
        self.hours = tuple(parse_clock(h) for h in self.hours)
        if not self.hours or any(b <= a for a, b in zip(self.hours, self.hours[1:])):
            raise InputError("hours must be non-empty and strictly increasing")
        if not 0 < self.quantile_threshold < 1:
            raise InputError("quantile_threshold must lie strictly between 0 and 1")
        if (self.walk_nodes is None) != (self.walk_edges is None):
            raise InputError("walk_nodes and walk_edges must be given together")
        if self.k_facilities < 1 or self.knn_k < 1 or self.workers < 1:
            raise InputError("k_facilities, knn_k and workers must be positive")
        self.query()  # validates the routing parameters

    def query(self, departure=None) -> QueryConfig:
        try:
            return QueryConfig(
                departure=self.hours[0] if departure is None else departure,
                window=self.window,
                percentile=self.percentile,
                max_duration=self.max_duration,
                max_rides=self.max_rides,
                walk_speed=self.walk_speed,
                max_walk_duration=self.max_walk_duration,
            )
        except ValueError as exc:
            raise InputError(str(exc)) from None

    def to_dict(self, include_execution=False):
        d = asdict(self)
        if not include_execution:
            d.pop("workers")
        for k, v in d.items():
            if isinstance(v, Path):
                d[k] = str(v)
            elif isinstance(v, dt.date):
                d[k] = v.isoformat()
            elif isinstance(v, tuple):
                d[k] = list(v)
        return d


def load_config(path, **overrides) -> RunConfig:
    """Read a TOML run file; relative paths resolve against the file's directory."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"{path}: {exc}") from None
    raw.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise InputError(f"{path}: unknown keys {unknown}")
    for key in PATH_KEYS:
        if raw.get(key):
            p = Path(raw[key])
            raw[key] = p if p.is_absolute() else (path.parent / p)
    if "service_date" not in raw:
        raise InputError(f"{path}: service_date is required")
    sd = raw["service_date"]
    if isinstance(sd, str):
        try:
            sd = dt.date.fromisoformat(sd) if "-" in sd else dt.datetime.strptime(sd, "%Y%m%d").date()
        except ValueError:
            raise InputError(f"{path}: bad service_date {raw['service_date']!r}") from None
    raw["service_date"] = sd
    for key in ("hours", "kinds"):
        if key in raw:
            raw[key] = tuple(raw[key])
    missing = [k for k in ("gtfs_dir", "zones", "facilities") if k not in raw]
    if missing:
        raise InputError(f"{path}: missing required keys {missing}")
    try:
        return RunConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def dump_config(cfg: RunConfig, path, relative_to=None):
    """Write ``cfg`` as a flat TOML file (hours as HH:MM strings)."""
    lines = []
    d = cfg.to_dict(include_execution=True)
    for key, value in d.items():
        if value is None:
            continue
        if key in PATH_KEYS and relative_to is not None:
            try:
                value = str(Path(value).relative_to(relative_to))
            except ValueError:
                pass
        if key == "hours":
            value = [f"{h // 3600:02d}:{h % 3600 // 60:02d}" for h in value]
        lines.append(f"{key} = {_toml(value)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _toml(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml(x) for x in v) + "]"
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'
