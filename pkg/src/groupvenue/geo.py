"""Geographic primitives, GPS trace ingestion and per-event context features."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, NamedTuple

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
MOBILITY_WINDOW_S = 48 * 3600
TRACE_HEADER = ["user_id", "timestamp_iso8601", "lat", "lon"]


class TraceParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _check_coords(lat: float, lon: float) -> None:
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise ValueError(f"non-finite coordinate ({lat}, {lon})")
    if not -90.0 <= lat <= 90.0:
        raise ValueError(f"latitude {lat} out of range")
    if not -180.0 <= lon <= 180.0:
        raise ValueError(f"longitude {lon} out of range")


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        _check_coords(self.lat, self.lon)


@dataclass(frozen=True)
class TracePoint:
    point: GeoPoint
    timestamp: int

    def __post_init__(self):
        if self.timestamp <= 0:
            raise ValueError("timestamp must be positive")


class DayClass(Enum):
    WEEKDAY = 0
    WEEKEND = 1


class DensityClass(Enum):
    LOW = 0
    HIGH = 1


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters."""
    return float(haversine_m(a.lat, a.lon, b.lat, b.lon))


def haversine_m(lat1, lon1, lat2, lon2):
    """Vectorised haversine distance in meters; broadcasts like numpy."""
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(lon2) - np.radians(lon1)
    h = np.sin(dphi / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


class LocationTrace:
    """One user's GPS samples, stored column-wise and sorted by time.

    Duplicate timestamps collapse to the last occurrence in input order.
    """

    __slots__ = ("user_id", "timestamps", "lat", "lon")

    def __init__(self, user_id, timestamps, lat, lon):
        ts = np.asarray(timestamps, dtype=np.int64)
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        if not (ts.shape == lat.shape == lon.shape) or ts.ndim != 1:
            raise ValueError("timestamps, lat and lon must be equal-length 1-D arrays")
        if ts.size:
            if ts.min() <= 0:
                raise ValueError("timestamps must be positive")
            if np.any(np.abs(lat) > 90) or np.any(np.abs(lon) > 180):
                raise ValueError("coordinate out of range")
            if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))):
                raise ValueError("non-finite coordinate")
            if np.any(np.diff(ts) <= 0):
                # keep the last row for each timestamp
                rev = ts[::-1]
                _, first_in_rev = np.unique(rev, return_index=True)
                keep = ts.size - 1 - first_in_rev
                ts, lat, lon = ts[keep], lat[keep], lon[keep]
        self.user_id = user_id
        self.timestamps = ts
        self.lat = lat
        self.lon = lon

    @classmethod
    def from_points(cls, user_id, points: Iterable[TracePoint]) -> "LocationTrace":
        pts = list(points)
        return cls(
            user_id,
            [p.timestamp for p in pts],
            [p.point.lat for p in pts],
            [p.point.lon for p in pts],
        )

    @property
    def points(self) -> list[TracePoint]:
        return [
            TracePoint(GeoPoint(float(a), float(o)), int(t))
            for t, a, o in zip(self.timestamps, self.lat, self.lon)
        ]

    def __len__(self):
        return int(self.timestamps.size)

    def head(self, n: int) -> "LocationTrace":
        return LocationTrace(self.user_id, self.timestamps[:n], self.lat[:n], self.lon[:n])

    def __eq__(self, other):
        if not isinstance(other, LocationTrace):
            return NotImplemented
        return (
            self.user_id == other.user_id
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.lat, other.lat)
            and np.array_equal(self.lon, other.lon)
        )

    def __repr__(self):
        return f"LocationTrace(user_id={self.user_id!r}, n={len(self)})"


# --------------------------------------------------------------------------
# trace file I/O


def format_timestamp(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> int:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


class RejectedRecord(NamedTuple):
    lineno: int
    reason: str


class TraceParseResult(NamedTuple):
    traces: dict
    rejected: list


def _fast_timestamps(col: list[str]) -> np.ndarray | None:
    # vectorised path for plain UTC stamps; None means fall back per row
    stripped = []
    for s in col:
        if s.endswith("Z"):
            s = s[:-1]
        elif s.endswith("+00:00"):
            s = s[:-6]
        if "+" in s or "-" in s[10:]:
            return None  # explicit offset: numpy would only warn and guess
        stripped.append(s)
    try:
        arr = np.array(stripped, dtype="datetime64[s]")
    except ValueError:
        return None
    return arr.astype(np.int64)


def parse_traces(stream) -> TraceParseResult:
    """Parse the trace CSV (``user_id,timestamp_iso8601,lat,lon``).

    Malformed rows raise :class:`TraceParseError`; rows with out-of-range
    coordinates are skipped and listed in ``result.rejected``.
    """
    if isinstance(stream, (str, bytes)):
        stream = io.StringIO(stream.decode() if isinstance(stream, bytes) else stream)
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None:
        return TraceParseResult({}, [])
    if [h.strip() for h in header] != TRACE_HEADER:
        raise TraceParseError(1, f"expected header {','.join(TRACE_HEADER)}")

    users, stamps, lats, lons, linenos = [], [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise TraceParseError(lineno, f"expected 4 fields, got {len(row)}")
        users.append(row[0])
        stamps.append(row[1])
        lats.append(row[2])
        lons.append(row[3])
        linenos.append(lineno)

    try:
        lat = np.array(lats, dtype=float)
        lon = np.array(lons, dtype=float)
    except ValueError:
        for ln, a, o in zip(linenos, lats, lons):
            try:
                float(a), float(o)
            except ValueError:
                raise TraceParseError(ln, f"bad coordinate {a!r},{o!r}") from None
        raise
    ts = _fast_timestamps(stamps)
    if ts is None:
        ts = np.empty(len(stamps), dtype=np.int64)
        for i, (ln, s) in enumerate(zip(linenos, stamps)):
            try:
                ts[i] = parse_timestamp(s)
            except ValueError:
                raise TraceParseError(ln, f"bad timestamp {s!r}") from None

    bad = ~(np.isfinite(lat) & np.isfinite(lon) & (np.abs(lat) <= 90) & (np.abs(lon) <= 180))
    bad |= ts <= 0
    rejected = [
        RejectedRecord(linenos[i], f"coordinate out of range ({lats[i]}, {lons[i]})")
        for i in np.flatnonzero(bad)
    ]
    good = ~bad
    user_arr = np.array(users, dtype=object)[good]
    ts, lat, lon = ts[good], lat[good], lon[good]

    traces = {}
    if user_arr.size:
        # stable sort keeps input order within equal (user, timestamp)
        order = np.lexsort((ts, user_arr.astype(str)))
        user_arr, ts, lat, lon = user_arr[order], ts[order], lat[order], lon[order]
        bounds = np.flatnonzero(user_arr[1:] != user_arr[:-1]) + 1
        for s, e in zip(np.r_[0, bounds], np.r_[bounds, user_arr.size]):
            uid = user_arr[s]
            traces[uid] = LocationTrace(uid, ts[s:e], lat[s:e], lon[s:e])
    return TraceParseResult(traces, rejected)


def write_traces(traces: Iterable[LocationTrace], stream) -> None:
    stream.write(",".join(TRACE_HEADER) + "\n")
    for tr in traces:
        uid = str(tr.user_id)
        lines = [
            f"{uid},{format_timestamp(t)},{a!r},{o!r}\n"
            for t, a, o in zip(tr.timestamps.tolist(), tr.lat.tolist(), tr.lon.tolist())
        ]
        stream.writelines(lines)


# --------------------------------------------------------------------------
# context features


def mobility_48h(trace: LocationTrace, event_created_at: float) -> float:
    """Total distance travelled over the 48 hours up to event creation.

    Only legs with both ends inside the closed window count.
    """
    if not math.isfinite(event_created_at):
        raise ValueError("event_created_at must be finite")
    ts = trace.timestamps
    lo = np.searchsorted(ts, event_created_at - MOBILITY_WINDOW_S, side="left")
    hi = np.searchsorted(ts, event_created_at, side="right")
    if hi - lo < 2:
        return 0.0
    lat, lon = trace.lat[lo:hi], trace.lon[lo:hi]
    return float(haversine_m(lat[:-1], lon[:-1], lat[1:], lon[1:]).sum())


def day_class(timestamp: float, utc_offset: float = 0) -> DayClass:
    days = math.floor((timestamp + utc_offset) / 86400)
    weekday = (days + 3) % 7  # 1970-01-01 was a Thursday; Monday == 0
    return DayClass.WEEKEND if weekday >= 5 else DayClass.WEEKDAY


@dataclass
class DensityGrid:
    cell_size: float = 0.01
    cells: dict = field(default_factory=dict)
    default: DensityClass = DensityClass.LOW

    def bin(self, lat: float, lon: float) -> tuple[int, int]:
        # the epsilon keeps exact boundaries in the upper cell despite float division
        return (
            math.floor(lat / self.cell_size + 1e-9),
            math.floor(lon / self.cell_size + 1e-9),
        )

    def lookup(self, lat: float, lon: float) -> DensityClass:
        return self.cells.get(self.bin(lat, lon), self.default)


def density_class(grid: DensityGrid, p: GeoPoint) -> DensityClass:
    return grid.lookup(p.lat, p.lon)


def read_density_grid(stream, cell_size: float = 0.01, default=DensityClass.LOW) -> DensityGrid:
    reader = csv.DictReader(stream)
    cells = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            key = (int(row["lat_bin"]), int(row["lon_bin"]))
            cells[key] = DensityClass[row["class"].strip().upper()]
        except (KeyError, ValueError, TypeError):
            raise ValueError(f"density grid line {lineno}: malformed row {row}") from None
    return DensityGrid(cell_size, cells, default)


def write_density_grid(grid: DensityGrid, stream) -> None:
    stream.write("lat_bin,lon_bin,class\n")
    for (a, o), cls in sorted(grid.cells.items()):
        stream.write(f"{a},{o},{cls.name.lower()}\n")
