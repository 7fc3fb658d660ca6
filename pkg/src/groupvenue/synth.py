"""Seeded synthetic worlds with planted clusters, ties, preferences and decisions.

Each group lives in its own small "city": a handful of frequented places a
few kilometres apart, each surrounded by restaurants. Members split their
time between those places according to a private mixture. How close the
group is socially is planted through shared visits, and every event's
decision is made by the consensus rule matching that closeness.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .clustering import DbscanParams
from .consensus import Strategy, aggregate
from .data import Dataset, GroupEvent, SuggestedVenue
from .geo import (
    EARTH_RADIUS_M,
    DayClass,
    DensityClass,
    DensityGrid,
    GeoPoint,
    LocationTrace,
    day_class,
    haversine_m,
    mobility_48h,
)
from .rwr import EdgeRWR, build_transition_graph, observed_days, visit_sequence
from .social import pair_social
from .venues import city_key

SLOT_S = 300
SLOTS_PER_DAY = 86400 // SLOT_S
START_TS = 1496275200  # 2017-06-01T00:00:00Z
REGIMES = ("low", "mid", "high")
BRANCH_OF_REGIME = {
    "low": Strategy.LEAST_MISERY,
    "mid": Strategy.AVERAGE,
    "high": Strategy.MAX_SATISFACTION,
}
PREFERENCE_SLOPE = 40.0  # steepness of planted preference in the place's time share
MOBILITY_REF_M = 40000.0
HOST_CONCENTRATION = 0.3  # Dirichlet concentration of the host's mixture (most peaked)
LAST_CONCENTRATION = 3.0  # and of the last joiner's (flattest)
_M_PER_DEG = EARTH_RADIUS_M * math.pi / 180.0


@dataclass(frozen=True)
class WorldConfig:
    n_groups: int = 200
    group_size_range: tuple = (3, 6)
    clusters_per_group: tuple = (3, 6)
    points_per_user: int = 2000
    cluster_sigma: float = 8.0
    social_regimes: tuple = (1 / 3, 1 / 3, 1 / 3)  # low, mid, high
    vote_noise: float = 0.02
    seed: int = 0
    events_per_group: tuple = (1, 3)
    days: int = 30
    conformity: float = 0.5
    mid_meetings_per_pair: int = 10
    venues_per_cluster: int = 60
    extra_city_venues: int = 40
    balance: float = 1.0
    mobility_effect: float = 0.0
    utc_offset: int = 0
    dbscan_radius: float = DbscanParams().radius

    def __post_init__(self):
        for name in ("group_size_range", "clusters_per_group", "events_per_group", "social_regimes"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.n_groups < 1 or self.points_per_user < 1 or self.days < 1:
            raise ValueError("n_groups, points_per_user and days must be >= 1")
        for name in ("group_size_range", "clusters_per_group", "events_per_group"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 1 <= low <= high, got {(lo, hi)}")
        if self.group_size_range[0] < 2:
            raise ValueError("groups need at least two members")
        if len(self.social_regimes) != 3 or min(self.social_regimes) < 0:
            raise ValueError("social_regimes needs three non-negative fractions")
        if abs(sum(self.social_regimes) - 1.0) > 1e-9:
            raise ValueError("social_regimes fractions must sum to 1")
        if not 0 < self.cluster_sigma < self.dbscan_radius:
            raise ValueError("cluster_sigma must be positive and below the clustering radius")
        if not 0.0 <= self.vote_noise <= 0.5:
            raise ValueError("vote_noise must lie in [0, 0.5]")
        if not 0.0 <= self.balance <= 1.0:
            raise ValueError("balance must lie in [0, 1]")
        if not 0.0 <= self.conformity <= 1.0:
            raise ValueError("conformity must lie in [0, 1]")
        if self.points_per_user > 0.6 * self.days * SLOTS_PER_DAY:
            raise ValueError("points_per_user does not fit the trace period at 5-minute cadence")
        if self.venues_per_cluster < 15:
            raise ValueError("venues_per_cluster must be >= 15")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GroupTruth:
    group_id: str
    city: str
    centers: list  # GeoPoint per planted place
    regime: str
    branch: Strategy
    mixtures: dict  # user_id -> visit mixture over places
    familiarity: dict  # user_id -> walk familiarity over places
    preference: dict  # user_id -> true preference per place (weekday)
    decided: dict  # event_id -> planted place the group settled on


@dataclass
class PlantedTruth:
    groups: dict = field(default_factory=dict)
    events: dict = field(default_factory=dict)  # event_id -> (group_id, decided place)

    def to_json(self) -> str:
        return json.dumps(
            {
                "groups": {
                    g: {
                        "city": t.city,
                        "centers": [[c.lat, c.lon] for c in t.centers],
                        "regime": t.regime,
                        "branch": t.branch.value,
                        "mixtures": {u: list(map(float, w)) for u, w in t.mixtures.items()},
                        "familiarity": {u: list(map(float, f)) for u, f in t.familiarity.items()},
                        "preference": {u: list(map(float, p)) for u, p in t.preference.items()},
                        "decided": dict(sorted(t.decided.items())),
                    }
                    for g, t in sorted(self.groups.items())
                },
                "events": {
                    e: {"group_id": g, "decided": c, "center": [self.groups[g].centers[c].lat,
                                                                  self.groups[g].centers[c].lon]}
                    for e, (g, c) in sorted(self.events.items())
                },
            },
            indent=1,
            sort_keys=True,
        )


def true_preference(mixture, weekend=False, high_density=None, mobility=None,
                    mobility_effect=0.0) -> np.ndarray:
    """Planted probability of favouring each place.

    Rises steeply with how much of their time the member spends there
    relative to an even split, plus a small lift on weekends and in dense
    areas.
    """
    w = np.asarray(mixture, dtype=float)
    z = PREFERENCE_SLOPE * (w * w.size - 1.0)
    if mobility is not None and mobility_effect:
        z = z + mobility_effect * math.log(max(mobility, 1.0) / MOBILITY_REF_M)
    p = 0.05 + 0.9 / (1.0 + np.exp(-z))
    p = p + 0.04 * float(weekend)
    if high_density is not None:
        p = p + 0.04 * np.asarray(high_density, dtype=float)
    return np.clip(p, 0.01, 0.99)


def _offset(center: GeoPoint, dx, dy):
    """Shift by metres east (dx) and north (dy) using the local metric."""
    lat = center.lat + np.asarray(dy) / _M_PER_DEG
    lon = center.lon + np.asarray(dx) / (_M_PER_DEG * math.cos(math.radians(center.lat)))
    return lat, lon


def _disc(rng, n, radius):
    r = radius * np.sqrt(rng.random(n))
    a = rng.random(n) * 2 * math.pi
    return r * np.cos(a), r * np.sin(a)


class _Schedule:
    """Which member is where, slot by slot, so that members only share a
    place at the same time when a shared visit was planted."""

    def __init__(self, n_users, n_places, n_slots):
        self.user_busy = np.zeros((n_users, n_slots), dtype=bool)
        self.place_busy = np.zeros((n_places, n_slots + 2), dtype=bool)  # padded by one slot
        self.n_slots = n_slots

    def free(self, users, place, start, length):
        if start < 0 or start + length > self.n_slots:
            return False
        if self.user_busy[users, start:start + length].any():
            return False
        # keep a one-slot margin so neighbouring visits never align in time
        return not self.place_busy[place, start:start + length + 2].any()

    def take(self, users, place, start, length):
        self.user_busy[np.ix_(users, np.arange(start, start + length))] = True
        self.place_busy[place, start + 1:start + length + 1] = True


def _place_centers(rng, city: GeoPoint, n):
    """Places about a city centre, pairwise at least 1.5 km apart."""
    pts = []
    while len(pts) < n:
        dx, dy = _disc(rng, 1, 8000.0)
        lat, lon = _offset(city, dx[0], dy[0])
        cand = GeoPoint(float(lat), float(lon))
        if all(haversine_m(cand.lat, cand.lon, p.lat, p.lon) >= 1500.0 for p in pts):
            pts.append(cand)
    return pts


def _mixtures(rng, m, n, balance):
    """Visit mixtures in join order: the host is the most settled member,
    later joiners spread their time more evenly.

    ``balance`` pulls the group's total time per place toward an even
    split, so that no place is popular with everyone by accident.
    """
    floor = 0.03
    W = np.empty((m, n))
    for k in range(m):
        conc = HOST_CONCENTRATION + (LAST_CONCENTRATION - HOST_CONCENTRATION) * k / max(m - 1, 1)
        W[k] = floor + (1.0 - floor * n) * rng.dirichlet(np.full(n, conc))
    B = W.copy()
    for _ in range(200):
        B *= (m / n) / B.sum(axis=0, keepdims=True)
        B /= B.sum(axis=1, keepdims=True)
    W = (1.0 - balance) * W + balance * B
    return list(W / W.sum(axis=1, keepdims=True))


class _GroupBuilder:
    def __init__(self, cfg: WorldConfig, g: int, rng):
        self.cfg = cfg
        self.g = g
        self.rng = rng
        self.gid = f"g{g:03d}"
        self.city = f"city{g:03d}"
        self.n_slots = cfg.days * SLOTS_PER_DAY

    def build(self):
        cfg, rng = self.cfg, self.rng
        m = int(rng.integers(cfg.group_size_range[0], cfg.group_size_range[1] + 1))
        n = int(rng.integers(cfg.clusters_per_group[0], cfg.clusters_per_group[1] + 1))
        regime = REGIMES[int(rng.choice(3, p=np.asarray(cfg.social_regimes)))]
        city = GeoPoint(float(rng.uniform(30.0, 45.0)), float(rng.uniform(-120.0, -75.0)))
        centers = _place_centers(rng, city, n)
        users = [f"u{self.g:03d}_{k}" for k in range(m)]
        mix = _mixtures(rng, m, n, cfg.balance)

        grid_cells = self._density_cells(city)
        cell = DensityGrid(0.01, grid_cells)
        dense = np.array([cell.lookup(c.lat, c.lon) is DensityClass.HIGH for c in centers])

        traces, labels = self._traces(users, mix, centers, regime)
        fam = self._planted_familiarity(users, mix, traces, labels, regime, n)
        catalogs, city_list = self._venues(centers, city)
        prefs = np.array([true_preference(f, False, dense) for f in fam])
        branch = BRANCH_OF_REGIME[regime]
        events, decided = self._events(users, fam, dense, centers, catalogs, branch, traces)

        truth = GroupTruth(
            self.gid, self.city, centers, regime, branch,
            dict(zip(users, mix)), dict(zip(users, fam)), dict(zip(users, prefs)), decided,
        )
        return traces, events, grid_cells, {city_key(self.city): city_list}, truth

    # -- geography -----------------------------------------------------

    def _density_cells(self, city: GeoPoint):
        cells = {}
        r_deg = 3000.0 / _M_PER_DEG
        lon_scale = math.cos(math.radians(city.lat))
        lo_a = math.floor((city.lat - r_deg) / 0.01)
        hi_a = math.floor((city.lat + r_deg) / 0.01)
        lo_o = math.floor((city.lon - r_deg / lon_scale) / 0.01)
        hi_o = math.floor((city.lon + r_deg / lon_scale) / 0.01)
        for a in range(lo_a, hi_a + 1):
            for o in range(lo_o, hi_o + 1):
                if haversine_m(city.lat, city.lon, (a + 0.5) * 0.01, (o + 0.5) * 0.01) <= 3000.0:
                    cells[(a, o)] = DensityClass.HIGH
        return cells

    def _venues(self, centers, city):
        rng, cfg = self.rng, self.cfg
        catalogs = []
        for c, center in enumerate(centers):
            dx, dy = _disc(rng, cfg.venues_per_cluster, 350.0)
            lat, lon = _offset(center, dx, dy)
            catalogs.append([self._venue(f"v{self.g:03d}_{c}_{k:02d}", la, lo)
                             for k, (la, lo) in enumerate(zip(lat, lon))])
        dx, dy = _disc(rng, cfg.extra_city_venues, 8000.0)
        lat, lon = _offset(city, dx, dy)
        extras = [self._venue(f"v{self.g:03d}_x{k:02d}", la, lo) for k, (la, lo) in enumerate(zip(lat, lon))]
        # interleave at random while keeping each place's own relevance order
        queues = catalogs + [extras]
        tokens = np.concatenate([np.full(len(q), i) for i, q in enumerate(queues)])
        rng.shuffle(tokens)
        heads = [0] * len(queues)
        city_list = []
        for t in tokens:
            city_list.append(queues[t][heads[t]])
            heads[t] += 1
        return catalogs, city_list

    def _venue(self, vid, lat, lon):
        rng = self.rng
        return {
            "venue_id": vid,
            "name": f"Restaurant {vid[1:]}",
            "lat": round(float(lat), 7),
            "lon": round(float(lon), 7),
            "checkins": int(rng.lognormal(5.0, 1.2)),
            "rating": round(float(rng.uniform(5.0, 9.5)), 1),
        }

    # -- traces --------------------------------------------------------

    def _traces(self, users, mix, centers, regime):
        cfg, rng = self.cfg, self.rng
        m, n = len(users), len(centers)
        sched = _Schedule(m, n, self.n_slots)
        pts = [[] for _ in range(m)]  # per user: list of (slot array, lat array, lon array)
        budget = np.full(m, cfg.points_per_user)
        group_mix = np.mean(mix, axis=0)

        def shared(members, mixture, length_range):
            for _ in range(200):
                c = int(rng.choice(n, p=mixture))
                length = int(rng.integers(*length_range))
                start = int(rng.integers(0, self.n_slots - length))
                if sched.free(members, c, start, length) and (budget[members] >= length).all():
                    break
            else:
                return
            sched.take(members, c, start, length)
            mdx, mdy = rng.normal(0.0, cfg.cluster_sigma, 2)
            for k in members:
                dx = mdx + rng.normal(0.0, 3.0, length)
                dy = mdy + rng.normal(0.0, 3.0, length)
                lat, lon = _offset(centers[c], dx, dy)
                pts[k].append((np.arange(start, start + length), lat, lon, c))
                budget[k] -= length

        if regime == "high":
            for _day in range(cfg.days):
                shared(np.arange(m), group_mix, (4, 9))
        elif regime == "mid":
            for i in range(m):
                for j in range(i + 1, m):
                    pair_mix = (mix[i] + mix[j]) / 2
                    for _ in range(cfg.mid_meetings_per_pair):
                        shared(np.array([i, j]), pair_mix, (3, 7))

        for k in range(m):
            self._solo_visits(k, mix[k], centers, sched, pts[k], int(budget[k]))

        traces, labels = {}, {}
        for k, u in enumerate(users):
            slots = np.concatenate([p[0] for p in pts[k]])
            lat = np.concatenate([p[1] for p in pts[k]])
            lon = np.concatenate([p[2] for p in pts[k]])
            place = np.concatenate([np.full(p[0].size, p[3]) for p in pts[k]])
            order = np.argsort(slots, kind="stable")
            labels[u] = place[order]
            ts = START_TS + slots.astype(np.int64) * SLOT_S
            traces[u] = LocationTrace(u, ts, np.round(lat, 7), np.round(lon, 7))
        return traces, labels

    def _planted_familiarity(self, users, mix, traces, labels, regime, n):
        """Walk familiarity on the planted places and planted ties, i.e. what
        the detector would measure given perfect clustering."""
        rate = {"low": 0.0, "mid": min(1.0, self.cfg.mid_meetings_per_pair / self.cfg.days), "high": 1.0}[regime]
        m = len(users)
        S = np.zeros((m, m))
        for i in range(m):
            for j in range(i + 1, m):
                S[i, j] = S[j, i] = pair_social(rate, mix[i], mix[j])
        visits = {u: visit_sequence(labels[u], traces[u].timestamps) for u in users}
        days = {u: observed_days(traces[u].timestamps) for u in users}
        graph = build_transition_graph(users, n, visits, days, S)
        return EdgeRWR().fit(graph).familiarity_

    def _solo_visits(self, k, mixture, centers, sched, out, budget):
        cfg, rng = self.cfg, self.rng
        n = len(centers)
        me = np.array([k])
        mean_len = 18
        free_slots = self.n_slots - int(sched.user_busy[k].sum())
        n_visits = max(1, budget // mean_len)
        mean_gap = max(0.0, (free_slots - budget) / n_visits * 0.9)
        t = int(rng.integers(0, max(1, int(mean_gap) + 1)))
        passes = 0
        while budget > 0:
            c = int(rng.choice(n, p=mixture))
            length = min(budget, int(rng.integers(6, 31)))
            while t < self.n_slots and not sched.free(me, c, t, length):
                t += 1
            if t >= self.n_slots:
                # ran out of timeline: fill from the start with short visits
                passes += 1
                if passes > 50:
                    raise RuntimeError(f"could not schedule {budget} points for user {k} of {self.gid}")
                t = int(rng.integers(0, SLOTS_PER_DAY))
                mean_gap = 0.0
                continue
            sched.take(me, c, t, length)
            dx = rng.normal(0.0, cfg.cluster_sigma, length)
            dy = rng.normal(0.0, cfg.cluster_sigma, length)
            lat, lon = _offset(centers[c], dx, dy)
            out.append((np.arange(t, t + length), lat, lon, c))
            budget -= length
            t += length + int(rng.uniform(0, 2 * mean_gap))

    # -- events --------------------------------------------------------

    def _events(self, users, fam, dense, centers, catalogs, branch, traces):
        cfg, rng = self.cfg, self.rng
        n = len(centers)
        n_events = int(rng.integers(cfg.events_per_group[0], cfg.events_per_group[1] + 1))
        created = np.sort(rng.integers(3 * 86400, (cfg.days - 1) * 86400, n_events)) + START_TS
        events, decisions = [], {}
        for e, t0 in enumerate(created.tolist()):
            weekend = day_class(t0, cfg.utc_offset) is DayClass.WEEKEND
            prefs = np.array([
                true_preference(f, weekend, dense, mobility_48h(traces[u], t0), cfg.mobility_effect)
                for f, u in zip(fam, users)
            ])
            decided = int(np.argmax(aggregate(branch, prefs, normalize=False)))
            order = rng.permutation(n)
            suggested = []
            by_place = {}
            for pos, c in enumerate(order.tolist()):
                pick = catalogs[c][int(rng.integers(0, 15))]
                sv = SuggestedVenue(
                    pick["venue_id"], pick["name"], GeoPoint(pick["lat"], pick["lon"]),
                    int(t0 + 600 * (pos + 1) + rng.integers(0, 300)),
                    users[int(rng.integers(len(users)))],
                )
                suggested.append(sv)
                by_place[c] = sv
            votes = {}
            for k, u in enumerate(users):
                q = (1 - cfg.conformity) * prefs[k] + cfg.conformity * (np.arange(n) == decided)
                vote = rng.random(n) < q
                flip = rng.random(n) < cfg.vote_noise
                vote = vote ^ flip
                votes[u] = {by_place[c].venue_id for c in range(n) if vote[c]}
            events.append(GroupEvent(
                event_id=f"e{self.g:03d}_{e}",
                group_id=self.gid,
                host=users[0],
                members=list(users),
                created_at=int(t0),
                suggested=suggested,
                votes=votes,
                final_venue_id=by_place[decided].venue_id,
                city=self.city,
            ))
            decisions[events[-1].event_id] = decided
        return events, decisions


def generate_world(config: WorldConfig = WorldConfig()):
    """Build a dataset and the truth planted in it; reproducible from ``config.seed``."""
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_groups)
    traces, events, cells, venues = {}, [], {}, {}
    truth = PlantedTruth()
    for g, ss in enumerate(seeds):
        tr, ev, gc, vn, gt = _GroupBuilder(config, g, np.random.default_rng(ss)).build()
        traces.update(tr)
        events.extend(ev)
        cells.update(gc)
        venues.update(vn)
        truth.groups[gt.group_id] = gt
        for e in ev:
            truth.events[e.event_id] = (gt.group_id, gt.decided[e.event_id])
    ds = Dataset(traces, events, DensityGrid(0.01, cells, DensityClass.LOW), venues, config.utc_offset)
    return ds, truth


def corrupt(dataset: Dataset, fraction: float) -> Dataset:
    """Keep only the earliest ``ceil(fraction * len)`` points of every trace."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if fraction == 1.0:
        return dataset
    kept = {u: t.head(math.ceil(round(fraction * len(t), 9))) for u, t in dataset.traces.items()}
    return Dataset(kept, dataset.events, dataset.density, dataset.venues, dataset.utc_offset)
