"""Group events and the on-disk dataset layout."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .geo import (
    DensityClass,
    DensityGrid,
    GeoPoint,
    format_timestamp,
    parse_timestamp,
    parse_traces,
    read_density_grid,
    write_density_grid,
    write_traces,
)


@dataclass
class SuggestedVenue:
    venue_id: str
    name: str
    location: GeoPoint
    suggested_at: int
    suggested_by: str | None = None


@dataclass
class GroupEvent:
    event_id: str
    group_id: str
    host: str
    members: list  # join order when ``join_order_known``
    created_at: int
    suggested: list = field(default_factory=list)
    votes: dict = field(default_factory=dict)  # user_id -> set of venue ids
    final_venue_id: str | None = None
    city: str | None = None
    join_order_known: bool = True

    def voted(self, user_id, venue_id) -> bool:
        return venue_id in self.votes.get(user_id, ())

    def venue(self, venue_id) -> SuggestedVenue | None:
        for v in self.suggested:
            if v.venue_id == venue_id:
                return v
        return None

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "group_id": self.group_id,
            "host": self.host,
            "members": list(self.members),
            "join_order_known": self.join_order_known,
            "created_at": format_timestamp(self.created_at),
            "city": self.city,
            "suggested": [
                {
                    "venue_id": v.venue_id,
                    "name": v.name,
                    "lat": v.location.lat,
                    "lon": v.location.lon,
                    "suggested_at": format_timestamp(v.suggested_at),
                    "suggested_by": v.suggested_by,
                }
                for v in self.suggested
            ],
            "votes": {u: sorted(vs) for u, vs in sorted(self.votes.items())},
            "final_venue_id": self.final_venue_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroupEvent":
        return cls(
            event_id=str(d["event_id"]),
            group_id=str(d["group_id"]),
            host=str(d["host"]),
            members=[str(m) for m in d["members"]],
            created_at=parse_timestamp(d["created_at"]),
            suggested=[
                SuggestedVenue(
                    str(v["venue_id"]),
                    v.get("name", ""),
                    GeoPoint(float(v["lat"]), float(v["lon"])),
                    parse_timestamp(v["suggested_at"]),
                    v.get("suggested_by"),
                )
                for v in d.get("suggested", [])
            ],
            votes={str(u): set(vs) for u, vs in d.get("votes", {}).items()},
            final_venue_id=d.get("final_venue_id"),
            city=d.get("city"),
            join_order_known=bool(d.get("join_order_known", True)),
        )


def read_events(stream) -> list[GroupEvent]:
    return [GroupEvent.from_dict(d) for d in json.load(stream)]


def write_events(events, stream) -> None:
    json.dump([e.to_dict() for e in events], stream, indent=1)
    stream.write("\n")


@dataclass
class Dataset:
    """Everything the pipeline consumes for one run."""

    traces: dict
    events: list
    density: DensityGrid = field(default_factory=DensityGrid)
    venues: dict = field(default_factory=dict)  # fixture: key -> list of venue dicts
    utc_offset: int = 0

    def groups(self) -> dict:
        """group_id -> sorted member ids, over all of the group's events."""
        out = {}
        for e in self.events:
            out.setdefault(e.group_id, set()).update(e.members)
        return {g: sorted(m) for g, m in sorted(out.items())}


DATASET_FILES = {
    "traces": "traces.csv",
    "events": "events.json",
    "density": "density.csv",
    "venues": "venues.json",
}


def save_dataset(ds: Dataset, directory) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {k: directory / v for k, v in DATASET_FILES.items()}
    with open(paths["traces"], "w", encoding="utf-8", newline="") as f:
        write_traces([ds.traces[u] for u in sorted(ds.traces, key=str)], f)
    with open(paths["events"], "w", encoding="utf-8") as f:
        write_events(ds.events, f)
    with open(paths["density"], "w", encoding="utf-8") as f:
        write_density_grid(ds.density, f)
    with open(paths["venues"], "w", encoding="utf-8") as f:
        json.dump(ds.venues, f, indent=1, sort_keys=True)
        f.write("\n")
    return paths


def load_dataset(traces, events, density=None, venues=None, utc_offset=0,
                 density_default=DensityClass.LOW, cell_size=0.01):
    """Read the dataset files; returns ``(dataset, rejected_trace_records)``."""
    with open(traces, encoding="utf-8", newline="") as f:
        parsed = parse_traces(f)
    with open(events, encoding="utf-8") as f:
        evs = read_events(f)
    grid = DensityGrid(cell_size, {}, density_default)
    if density:
        with open(density, encoding="utf-8") as f:
            grid = read_density_grid(f, cell_size, density_default)
    fixture = {}
    if venues:
        with open(venues, encoding="utf-8") as f:
            fixture = json.load(f)
    return Dataset(parsed.traces, evs, grid, fixture, int(utc_offset)), parsed.rejected
