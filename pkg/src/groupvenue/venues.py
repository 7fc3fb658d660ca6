"""Venue candidates per cluster, rank-weighted pooling and baseline orderings."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .geo import GeoPoint, haversine_m

log = logging.getLogger(__name__)

TOKEN_ENV = "VENUE_API_TOKEN"
CITY_PREFIX = "city:"


@dataclass(frozen=True)
class Venue:
    venue_id: str
    name: str
    location: GeoPoint
    checkins: int = 0
    rating: float | None = None

    def __post_init__(self):
        if self.checkins < 0:
            raise ValueError(f"venue {self.venue_id}: negative checkins")
        if self.rating is not None and not 0.0 <= self.rating <= 10.0:
            raise ValueError(f"venue {self.venue_id}: rating {self.rating} outside [0, 10]")

    @classmethod
    def from_dict(cls, d: dict) -> "Venue":
        rating = d.get("rating")
        return cls(
            str(d["venue_id"]),
            str(d.get("name", "")),
            GeoPoint(float(d["lat"]), float(d["lon"])),
            int(d.get("checkins", 0) or 0),
            None if rating is None else float(rating),
        )

    def to_dict(self) -> dict:
        return {
            "venue_id": self.venue_id,
            "name": self.name,
            "lat": self.location.lat,
            "lon": self.location.lon,
            "checkins": self.checkins,
            "rating": self.rating,
        }


@dataclass
class CandidateList:
    cluster_id: object
    venues: list = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for v in self.venues:
            if v.venue_id in seen:
                raise ValueError(f"duplicate venue {v.venue_id} in candidates for {self.cluster_id}")
            seen.add(v.venue_id)

    def __len__(self):
        return len(self.venues)


class ProviderKind(str, Enum):
    FIXTURE = "fixture"
    CATALOG = "catalog"
    HTTP = "http"


@dataclass(frozen=True)
class ProviderConfig:
    kind: ProviderKind = ProviderKind.CATALOG
    radius: float = 500.0
    limit: int = 50
    base_url: str | None = None
    fixture_path: str | None = None
    timeout: float = 10.0
    retries: int = 3
    backoff: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", ProviderKind(self.kind))
        if self.limit < 1:
            raise ValueError("provider limit must be >= 1")
        if not self.radius > 0:
            raise ValueError("provider radius must be > 0")
        if self.kind is ProviderKind.HTTP and not self.base_url:
            raise ValueError("http provider needs base_url")


class ProviderError(RuntimeError):
    """A provider request failed after all retries."""

    retriable = True


def parse_venues(payload) -> list:
    if isinstance(payload, dict):
        payload = payload.get("venues", payload.get("response", []))
    return [Venue.from_dict(d) for d in payload]


def read_fixture(stream) -> dict:
    raw = json.load(stream)
    return {str(k): parse_venues(v) for k, v in raw.items()}


def fixture_json(fixture: dict) -> dict:
    return {k: [v.to_dict() if isinstance(v, Venue) else v for v in vs] for k, vs in fixture.items()}


def city_key(city) -> str:
    return f"{CITY_PREFIX}{city}"


class FixtureProvider:
    """Stored lists returned verbatim by key; a missing key gives no venues."""

    def __init__(self, fixture: dict, config: ProviderConfig | None = None):
        self.config = config or ProviderConfig(ProviderKind.FIXTURE)
        self.fixture = {k: [v if isinstance(v, Venue) else Venue.from_dict(v) for v in vs]
                        for k, vs in fixture.items()}

    def fetch(self, key, centroid: GeoPoint | None = None) -> CandidateList:
        venues = self.fixture.get(str(key))
        if venues is None:
            log.warning("no fixture entry for %s", key)
            venues = []
        return CandidateList(key, list(venues[: self.config.limit]))

    def city(self, name) -> list:
        return list(self.fixture.get(city_key(name), []))


class CatalogProvider(FixtureProvider):
    """Geographic search over every stored list.

    Venues within ``radius`` of the centroid come back in the order they
    were stored (the provider's own relevance order), at most ``limit``.
    Lets a fixture keyed by city serve clusters detected at run time.
    """

    def __init__(self, fixture: dict, config: ProviderConfig | None = None):
        super().__init__(fixture, config or ProviderConfig(ProviderKind.CATALOG))
        seen = {}
        for key in sorted(self.fixture):
            for v in self.fixture[key]:
                seen.setdefault(v.venue_id, v)
        self._all = list(seen.values())
        self._lat = np.array([v.location.lat for v in self._all])
        self._lon = np.array([v.location.lon for v in self._all])

    def fetch(self, key, centroid: GeoPoint | None = None) -> CandidateList:
        if centroid is None:
            return super().fetch(key)
        if not self._all:
            return CandidateList(key, [])
        d = haversine_m(centroid.lat, centroid.lon, self._lat, self._lon)
        idx = np.flatnonzero(d <= self.config.radius)[: self.config.limit]
        return CandidateList(key, [self._all[i] for i in idx])


class HttpProvider:
    """JSON venue search over HTTP; safe to share across threads."""

    def __init__(self, config: ProviderConfig, token: str | None = None):
        self.config = config
        self.token = token if token is not None else os.environ.get(TOKEN_ENV)

    def _get(self, params: dict):
        url = self.config.base_url.rstrip("/") + "/recommendations?" + urllib.parse.urlencode(params)
        headers = {"Accept": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        last = None
        for attempt in range(self.config.retries):
            try:
                req = urllib.request.Request(url, headers=headers)
                with urllib.request.urlopen(req, timeout=self.config.timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except (urllib.error.URLError, OSError, ValueError) as exc:
                last = exc
                if attempt + 1 < self.config.retries:
                    time.sleep(self.config.backoff * 2 ** attempt)
        raise ProviderError(f"venue request failed after {self.config.retries} attempts: {last}")

    def fetch(self, key, centroid: GeoPoint | None = None) -> CandidateList:
        if centroid is None:
            raise ValueError("http provider needs a centroid")
        payload = self._get({
            "ll": f"{centroid.lat},{centroid.lon}",
            "radius": f"{self.config.radius:g}",
            "limit": self.config.limit,
            "category": "restaurant",
        })
        return CandidateList(key, parse_venues(payload)[: self.config.limit])

    def city(self, name) -> list:
        raise ProviderError("city-level listing is not available over http; use a fixture")


def make_provider(config: ProviderConfig, fixture: dict | None = None):
    if config.kind is ProviderKind.HTTP:
        return HttpProvider(config)
    if fixture is None:
        if not config.fixture_path:
            raise ValueError(f"{config.kind.value} provider needs a fixture")
        with open(config.fixture_path, encoding="utf-8") as f:
            fixture = read_fixture(f)
    cls = FixtureProvider if config.kind is ProviderKind.FIXTURE else CatalogProvider
    return cls(fixture, config)


def fetch_candidates(provider, cluster, key=None) -> CandidateList:
    """Candidates around one cluster; ``key`` defaults to its cluster id."""
    return provider.fetch(cluster.cluster_id if key is None else key, cluster.centroid)


def fetch_all(provider, clusters, keys=None, threads=1) -> list:
    keys = [c.cluster_id for c in clusters] if keys is None else list(keys)
    if threads > 1 and len(clusters) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda ck: fetch_candidates(provider, *ck), zip(clusters, keys)))
    return [fetch_candidates(provider, c, k) for c, k in zip(clusters, keys)]


# --------------------------------------------------------------------------
# ranking


def rankscore(rank_j: int, m: int, p_gc: float) -> float:
    """Provider-rank weight ``(m - j + 1) / m`` times the cluster probability."""
    if not 1 <= rank_j <= m:
        raise ValueError(f"rank {rank_j} outside 1..{m}")
    if p_gc < 0:
        raise ValueError("cluster probability must be >= 0")
    return (m - (rank_j - 1)) / m * p_gc


def _order_key(item):
    venue, score = item
    return (-score, -venue.checkins, venue.venue_id)


def recommend_topn(candidate_lists, group_scores, n: int) -> list:
    """Top ``n`` ``(venue, score)`` pairs pooled over per-cluster lists.

    ``candidate_lists[i]`` belongs to the cluster scored ``group_scores[i]``.
    A venue listed for several clusters keeps its best score.
    """
    if len(candidate_lists) != len(group_scores):
        raise ValueError("need one group score per candidate list")
    best = {}
    for cands, p in zip(candidate_lists, group_scores):
        m = len(cands)
        for j, v in enumerate(cands.venues, start=1):
            s = rankscore(j, m, float(p))
            if v.venue_id not in best or s > best[v.venue_id][1]:
                best[v.venue_id] = (v, s)
    return sorted(best.values(), key=_order_key)[: max(int(n), 0)]


class BaselineMode(str, Enum):
    PROVIDER_ORDER = "provider_order"
    MOST_POPULAR = "most_popular"
    HIGHEST_RATING = "highest_rating"
    EQUAL_WEIGHTED = "equal_weighted"


def baseline_lists(mode, venues_or_lists, n: int | None = None) -> list:
    """Venues ordered by a non-personalised baseline.

    The first three modes take a city-level list; ``equal_weighted`` takes
    per-cluster candidate lists and pools them with uniform cluster weight.
    """
    mode = BaselineMode(mode)
    if mode is BaselineMode.EQUAL_WEIGHTED:
        lists = list(venues_or_lists)
        if not lists:
            return []
        out = [v for v, _ in recommend_topn(lists, [1.0 / len(lists)] * len(lists), 10**9)]
    else:
        venues = list(venues_or_lists)
        if mode is BaselineMode.PROVIDER_ORDER:
            out = venues
        elif mode is BaselineMode.MOST_POPULAR:
            out = sorted(venues, key=lambda v: -v.checkins)
        else:
            out = sorted(venues, key=lambda v: (-(v.rating if v.rating is not None else -1.0), -v.checkins))
    return out if n is None else out[:n]


def write_recommendations(rows, stream) -> None:
    """``rows``: iterable of ``(event_id, [(venue, score), ...])``."""
    stream.write("event_id,rank,venue_id,score\n")
    for event_id, ranked in rows:
        for rank, (v, score) in enumerate(ranked, start=1):
            stream.write(f"{event_id},{rank},{v.venue_id},{score:.6f}\n")


# --------------------------------------------------------------------------
# stub server for exercising the http client


class _StubHandler(BaseHTTPRequestHandler):
    catalog: CatalogProvider
    token: str | None = None
    failures: list

    def do_GET(self):  # noqa: N802 (http.server naming)
        if self.failures and self.failures[0] > 0:
            self.failures[0] -= 1
            self.send_error(503, "try again")
            return
        if self.token and self.headers.get("Authorization") != f"Bearer {self.token}":
            self.send_error(401, "bad token")
            return
        url = urllib.parse.urlparse(self.path)
        if url.path.rstrip("/") != "/recommendations":
            self.send_error(404)
            return
        q = urllib.parse.parse_qs(url.query)
        try:
            lat, lon = (float(x) for x in q["ll"][0].split(","))
            radius = float(q.get("radius", ["500"])[0])
            limit = int(q.get("limit", ["50"])[0])
        except (KeyError, ValueError):
            self.send_error(400, "bad query")
            return
        d = haversine_m(lat, lon, self.catalog._lat, self.catalog._lon) if self.catalog._all else []
        hits = [self.catalog._all[i] for i in np.flatnonzero(np.asarray(d) <= radius)[:limit]]
        body = json.dumps([v.to_dict() for v in hits]).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@contextmanager
def stub_server(fixture: dict, token: str | None = None, fail_first: int = 0):
    """Serve ``fixture`` venues on localhost; yields the base URL.

    ``fail_first`` makes the first requests answer 503, for retry tests.
    """
    handler = type("Handler", (_StubHandler,), {
        "catalog": CatalogProvider(fixture, ProviderConfig(radius=1e9, limit=10**6)),
        "token": token,
        "failures": [fail_first],
    })
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_address[1]}"
    finally:
        server.shutdown()
        server.server_close()
