"""Group location cluster detection.

DBSCAN over haversine neighbourhoods, centroid summaries, per-user
familiarity counts and venue-to-cluster assignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, ClusterMixin

from .geo import EARTH_RADIUS_M, GeoPoint, LocationTrace, haversine_m

NOISE = -1
VENUE_MATCH_RADIUS_M = 500.0
# relative slack around the chord radius; candidates in the band are
# re-checked with the exact haversine predicate
_CHORD_SLACK = 1e-7


@dataclass(frozen=True)
class DbscanParams:
    radius: float = 20.0
    min_samples: int = 40

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")


def unit_vectors(lat, lon) -> np.ndarray:
    la = np.radians(np.asarray(lat, dtype=float))
    lo = np.radians(np.asarray(lon, dtype=float))
    c = np.cos(la)
    return np.column_stack((c * np.cos(lo), c * np.sin(lo), np.sin(la)))


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        parent = self.parent
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _dense_cell_ids(lat, lon, radius):
    """Bin points into cells small enough that any two members are within
    ``radius``. Returns per-point cell ids, or None when no safe cell width
    exists (data touching a pole)."""
    cos_max = math.cos(math.radians(float(np.min(np.abs(lat)))))
    if cos_max < 1e-6:
        return None
    side = 0.99 * radius / math.sqrt(2.0)
    m_per_deg = EARTH_RADIUS_M * math.pi / 180.0
    dlat = side / m_per_deg
    dlon = side / (m_per_deg * cos_max)
    ilat = np.floor(lat / dlat).astype(np.int64)
    ilon = np.floor(lon / dlon).astype(np.int64)
    ilon -= ilon.min()
    _, ids = np.unique(ilat * (int(ilon.max()) + 1) + ilon, return_inverse=True)
    return ids.reshape(-1)


def _exact_within(lat, lon, i, cand, radius):
    cand = np.asarray(cand, dtype=np.int64)
    if cand.size == 0:
        return cand
    d = haversine_m(lat[i], lon[i], lat[cand], lon[cand])
    return cand[d <= radius]


def _core_mask(X, lat, lon, tree, radius, min_samples, cell_ids, lo, hi):
    n = lat.size
    core = np.zeros(n, dtype=bool)
    if cell_ids is not None:
        counts = np.bincount(cell_ids)
        core |= counts[cell_ids] >= min_samples
    rest = np.flatnonzero(~core)
    if rest.size == 0:
        return core
    c_hi = np.asarray(tree.query_ball_point(X[rest], hi, return_length=True))
    rest = rest[c_hi >= min_samples]
    c_lo = np.asarray(tree.query_ball_point(X[rest], lo, return_length=True))
    core[rest[c_lo >= min_samples]] = True
    for i in rest[c_lo < min_samples]:
        nb = _exact_within(lat, lon, i, tree.query_ball_point(X[i], hi), radius)
        core[i] = nb.size >= min_samples
    return core


def _groups_connected(XA, XB, ia, ib, lat, lon, radius, hi):
    center_b = XB.mean(axis=0)
    a = int(np.argmin(((XA - center_b) ** 2).sum(axis=1)))
    b = int(np.argmin(((XB - XA[a]) ** 2).sum(axis=1)))
    if haversine_m(lat[ia[a]], lon[ia[a]], lat[ib[b]], lon[ib[b]]) <= radius:
        return True
    tb = cKDTree(XB)
    d, _ = tb.query(XA, k=1, distance_upper_bound=hi)
    for k in np.flatnonzero(np.isfinite(d)):
        cand = ib[np.asarray(tb.query_ball_point(XA[k], hi), dtype=np.int64)]
        if _exact_within(lat, lon, ia[k], cand, radius).size:
            return True
    return False


def dbscan_arrays(lat, lon, radius=20.0, min_samples=40):
    """DBSCAN labels for points given in scan order.

    Returns ``(labels, core_mask)``. Clusters are numbered in discovery order
    (the scan position of their first core point); a border point reachable
    from several clusters joins the earliest discovered one.
    """
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    n = lat.size
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels, np.zeros(0, dtype=bool)

    X = unit_vectors(lat, lon)
    chord = 2.0 * math.sin(radius / (2.0 * EARTH_RADIUS_M))
    lo, hi = chord * (1 - _CHORD_SLACK), chord * (1 + _CHORD_SLACK)
    tree = cKDTree(X)
    cell_ids = _dense_cell_ids(lat, lon, radius)
    core = _core_mask(X, lat, lon, tree, radius, min_samples, cell_ids, lo, hi)
    core_idx = np.flatnonzero(core)
    if core_idx.size == 0:
        return labels, core

    # cores sharing a cell are mutual neighbours, so connectivity is solved
    # between cell groups rather than between individual points
    if cell_ids is not None:
        _, group_of_core = np.unique(cell_ids[core_idx], return_inverse=True)
        group_of_core = group_of_core.reshape(-1)
    else:
        group_of_core = np.arange(core_idx.size)
    n_groups = int(group_of_core.max()) + 1
    order = np.argsort(group_of_core, kind="stable")
    starts = np.searchsorted(group_of_core[order], np.arange(n_groups + 1))
    members = [core_idx[order[starts[g]:starts[g + 1]]] for g in range(n_groups)]
    centers = np.array([X[m].mean(axis=0) for m in members])
    spans = np.array([np.sqrt(((X[m] - c) ** 2).sum(axis=1)).max() for m, c in zip(members, centers)])

    uf = _UnionFind(n_groups)
    if n_groups > 1:
        ctree = cKDTree(centers)
        pairs = ctree.query_pairs(2.0 * spans.max() + hi, output_type="ndarray")
        if len(pairs):
            gap = np.sqrt(((centers[pairs[:, 0]] - centers[pairs[:, 1]]) ** 2).sum(axis=1))
            pairs = pairs[gap <= spans[pairs[:, 0]] + spans[pairs[:, 1]] + hi]
            pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
        for ga, gb in pairs:
            if uf.find(ga) == uf.find(gb):
                continue
            ia, ib = members[ga], members[gb]
            if _groups_connected(X[ia], X[ib], ia, ib, lat, lon, radius, hi):
                uf.union(ga, gb)

    roots = np.array([uf.find(g) for g in range(n_groups)])
    comp_of_core = roots[group_of_core]
    comp_ids, comp_inv = np.unique(comp_of_core, return_inverse=True)
    comp_inv = comp_inv.reshape(-1)
    first = np.full(comp_ids.size, n, dtype=np.int64)
    np.minimum.at(first, comp_inv, core_idx)
    rank = np.empty(comp_ids.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(comp_ids.size)
    labels[core_idx] = rank[comp_inv]

    # border points: the earliest discovered cluster with a core in reach wins
    remaining = np.flatnonzero(~core)
    for r in range(comp_ids.size):
        if remaining.size == 0:
            break
        cores_r = core_idx[rank[comp_inv] == r]
        tr = cKDTree(X[cores_r])
        d, j = tr.query(X[remaining], k=1, distance_upper_bound=hi)
        hit = np.zeros(remaining.size, dtype=bool)
        near = np.isfinite(d)
        hit[near & (d <= lo)] = True
        for k in np.flatnonzero(near & (d > lo)):
            cand = cores_r[np.asarray(tr.query_ball_point(X[remaining[k]], hi), dtype=np.int64)]
            hit[k] = _exact_within(lat, lon, remaining[k], cand, radius).size > 0
        labels[remaining[hit]] = r
        remaining = remaining[~hit]
    return labels, core


class LocationDBSCAN(BaseEstimator, ClusterMixin):
    """DBSCAN on ``(lat, lon)`` rows with great-circle neighbourhoods.

    Row order is the scan order, which decides border-point ties.
    """

    def __init__(self, radius=20.0, min_samples=40):
        self.radius = radius
        self.min_samples = min_samples

    def fit(self, X, y=None):
        DbscanParams(self.radius, self.min_samples)
        X = np.asarray(X, dtype=float).reshape(-1, 2)
        self.labels_, self.core_sample_mask_ = dbscan_arrays(
            X[:, 0], X[:, 1], self.radius, self.min_samples
        )
        self.core_sample_indices_ = np.flatnonzero(self.core_sample_mask_)
        return self


def dbscan(points, params: DbscanParams = DbscanParams()) -> np.ndarray:
    """Label ``(GeoPoint, user_id)`` pairs; input order is the scan order."""
    pts = list(points)
    lat = [p.lat for p, _ in pts]
    lon = [p.lon for p, _ in pts]
    return dbscan_arrays(lat, lon, params.radius, params.min_samples)[0]


# --------------------------------------------------------------------------
# cluster summaries


@dataclass
class LocationCluster:
    cluster_id: int
    centroid: GeoPoint
    member_visit_counts: dict = field(default_factory=dict)
    total_points: int = 0
    mean_timestamp: float = 0.0


@dataclass
class MergedPoints:
    """All members' points of one group in ``(user_id, timestamp)`` order."""

    user: np.ndarray
    timestamps: np.ndarray
    lat: np.ndarray
    lon: np.ndarray

    @classmethod
    def from_traces(cls, traces) -> "MergedPoints":
        traces = sorted(traces, key=lambda t: str(t.user_id))
        if not traces:
            empty = np.zeros(0)
            return cls(np.zeros(0, dtype=object), empty.astype(np.int64), empty, empty)
        user = np.concatenate([np.full(len(t), t.user_id, dtype=object) for t in traces])
        return cls(
            user,
            np.concatenate([t.timestamps for t in traces]),
            np.concatenate([t.lat for t in traces]),
            np.concatenate([t.lon for t in traces]),
        )

    def __len__(self):
        return int(self.lat.size)


def build_clusters(points: MergedPoints, labels) -> tuple[list[LocationCluster], np.ndarray]:
    """Summarise DBSCAN output.

    Cluster ids are reassigned by descending size, ties by earlier mean
    timestamp. Returns the clusters and the relabelled per-point ids.
    """
    labels = np.asarray(labels)
    found = np.unique(labels[labels != NOISE])
    summaries = []
    for lab in found:
        idx = np.flatnonzero(labels == lab)
        users, counts = np.unique(points.user[idx].astype(str), return_counts=True)
        by_str = {str(u): u for u in points.user[idx]}
        summaries.append(
            (
                -idx.size,
                float(points.timestamps[idx].mean()),
                int(lab),
                GeoPoint(float(points.lat[idx].mean()), float(points.lon[idx].mean())),
                {by_str[u]: int(c) for u, c in zip(users, counts)},
            )
        )
    summaries.sort(key=lambda s: (s[0], s[1], s[2]))
    remap = {}
    clusters = []
    for new_id, (neg_size, mean_ts, lab, centroid, counts) in enumerate(summaries):
        remap[lab] = new_id
        clusters.append(LocationCluster(new_id, centroid, counts, -neg_size, mean_ts))
    relabelled = np.full(labels.shape, NOISE, dtype=np.int64)
    for lab, new_id in remap.items():
        relabelled[labels == lab] = new_id
    return clusters, relabelled


@dataclass
class FamiliarityVector:
    user_id: object
    weights: np.ndarray
    cold_start: bool = False


def familiarity_vector(user_id, clusters) -> FamiliarityVector:
    counts = np.array([c.member_visit_counts.get(user_id, 0) for c in clusters], dtype=float)
    total = counts.sum()
    if total == 0:
        return FamiliarityVector(user_id, np.zeros(len(clusters)), cold_start=True)
    return FamiliarityVector(user_id, counts / total)


def nearest_cluster(venue: GeoPoint, clusters):
    """``(cluster_id, meters)`` of the closest centroid, or None."""
    if not clusters:
        return None
    lat = np.array([c.centroid.lat for c in clusters])
    lon = np.array([c.centroid.lon for c in clusters])
    d = haversine_m(venue.lat, venue.lon, lat, lon)
    k = int(np.argmin(d))
    return clusters[k].cluster_id, float(d[k])


def assign_venue(venue: GeoPoint, clusters, max_m: float = VENUE_MATCH_RADIUS_M):
    """Cluster id the venue falls within, or None beyond ``max_m``."""
    hit = nearest_cluster(venue, clusters)
    if hit is None or hit[1] > max_m:
        return None
    return hit[0]


class GroupClusterDetector(BaseEstimator):
    """Detect a group's location clusters from its members' traces."""

    def __init__(self, radius=20.0, min_samples=40):
        self.radius = radius
        self.min_samples = min_samples

    def fit(self, traces, y=None):
        traces = list(traces)
        merged = MergedPoints.from_traces(traces)
        raw, _ = dbscan_arrays(merged.lat, merged.lon, self.radius, self.min_samples)
        self.clusters_, labels = build_clusters(merged, raw)
        self.labels_ = labels
        # per-user label arrays aligned with each trace's points
        self.user_labels_ = {}
        offset = 0
        for tr in sorted(traces, key=lambda t: str(t.user_id)):
            self.user_labels_[tr.user_id] = labels[offset:offset + len(tr)]
            offset += len(tr)
        return self

    def familiarity(self, user_id) -> FamiliarityVector:
        return familiarity_vector(user_id, self.clusters_)


# --------------------------------------------------------------------------
# dumps


def cluster_key(group_id, cluster_id) -> str:
    return f"{group_id}:{cluster_id}"


def write_cluster_dump(clusters_by_group: dict, cluster_stream, counts_stream) -> None:
    cluster_stream.write("cluster_id,lat,lon,total_points\n")
    counts_stream.write("cluster_id,user_id,count\n")
    for gid in sorted(clusters_by_group, key=str):
        for c in clusters_by_group[gid]:
            key = cluster_key(gid, c.cluster_id)
            cluster_stream.write(f"{key},{c.centroid.lat!r},{c.centroid.lon!r},{c.total_points}\n")
            for uid in sorted(c.member_visit_counts, key=str):
                counts_stream.write(f"{key},{uid},{c.member_visit_counts[uid]}\n")
