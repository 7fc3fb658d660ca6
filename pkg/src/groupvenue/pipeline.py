"""Per-group analysis: clusters, social strength, familiarity and features.

Two passes over the groups. The first detects clusters and counts meetings;
meeting rates are then normalised by the largest rate in the whole dataset,
and the second pass builds the social matrices, transition graphs and
familiarity walks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .clustering import DbscanParams, GroupClusterDetector, assign_venue, cluster_key, familiarity_vector
from .consensus import label_clusters
from .geo import DensityClass, density_class, day_class, DayClass, mobility_48h
from .preference import FEATURES
from .rwr import EdgeRWR, build_transition_graph, observed_days, visit_sequence
from .social import detect_meetings, group_social, social_matrix


@dataclass(frozen=True)
class PipelineParams:
    dbscan: DbscanParams = DbscanParams()
    w1: float = 0.8
    alphas: tuple = (0.85, 0.85, 0.85)
    beta: float = 0.85
    tol: float = 1e-8
    max_iter: int = 200


@dataclass
class GroupState:
    group_id: str
    members: list  # sorted member ids, the row order of every matrix below
    clusters: list
    familiarity_counts: dict  # user -> count-based familiarity weights
    raw_rates: dict  # frozenset pair -> meetings per day
    removed: object = None  # member whose trace was withheld, if any
    social: np.ndarray | None = None
    social_g: float = 0.0
    graph: object = None
    familiarity: np.ndarray | None = None  # members x clusters walk weights

    @property
    def keys(self):
        return [cluster_key(self.group_id, c.cluster_id) for c in self.clusters]

    def familiarity_of(self, user_id) -> np.ndarray:
        return self.familiarity[self.members.index(user_id)]


def _first_pass(gid, members, traces, params: PipelineParams, removed=None):
    present = [u for u in members if u != removed and u in traces]
    det = GroupClusterDetector(params.dbscan.radius, params.dbscan.min_samples).fit(
        [traces[u] for u in present]
    )
    fam = {u: familiarity_vector(u, det.clusters_).weights for u in members}
    rates = {}
    for i, u in enumerate(present):
        for v in present[i + 1:]:
            rates[frozenset((u, v))] = detect_meetings(traces[u], traces[v]).rate
    state = GroupState(gid, list(members), det.clusters_, fam, rates, removed)
    state._labels = det.user_labels_
    return state


def _second_pass(state: GroupState, traces, rate_scale, params: PipelineParams):
    members = state.members
    n = len(state.clusters)
    norm = {k: (v / rate_scale if rate_scale > 0 else 0.0) for k, v in state.raw_rates.items()}
    S = social_matrix(members, norm, state.familiarity_counts, params.w1)
    state.social = S
    keep = [i for i, u in enumerate(members) if u != state.removed]
    state.social_g = group_social(S[np.ix_(keep, keep)]) if len(keep) >= 2 else 0.0
    if n == 0:
        state.familiarity = np.zeros((len(members), 0))
        return state
    walkers = [members[i] for i in keep]
    visits, days = {}, {}
    for u in walkers:
        labels = state._labels.get(u)
        if labels is None:
            continue
        visits[u] = visit_sequence(labels, traces[u].timestamps)
        days[u] = observed_days(traces[u].timestamps)
    graph = build_transition_graph(walkers, n, visits, days, S[np.ix_(keep, keep)], params.alphas)
    walk = EdgeRWR(params.beta, params.tol, params.max_iter).fit(graph).familiarity_
    fam = np.full((len(members), n), 1.0 / n)
    fam[keep] = walk
    state.graph = graph
    state.familiarity = fam
    return state


def _map(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def analyze_groups(dataset, params: PipelineParams = PipelineParams(), removed: dict | None = None,
                   rate_scale: float | None = None, threads: int = 1):
    """GroupState per group id.

    ``removed`` maps a group id to a member whose trace is withheld.
    ``rate_scale`` fixes the meeting-rate normaliser; by default it is the
    largest pair rate found.
    """
    removed = removed or {}
    groups = dataset.groups()
    firsts = _map(
        lambda g: _first_pass(g, groups[g], dataset.traces, params, removed.get(g)),
        list(groups), threads,
    )
    if rate_scale is None:
        rate_scale = max((r for s in firsts for r in s.raw_rates.values()), default=0.0)
    _map(lambda s: _second_pass(s, dataset.traces, rate_scale, params), firsts, threads)
    out = {s.group_id: s for s in firsts}
    for s in firsts:
        del s._labels
    return out, rate_scale


# --------------------------------------------------------------------------
# features


@dataclass
class SampleTable:
    """One row per (member, suggested venue) of every event."""

    X: np.ndarray
    y: np.ndarray
    user: np.ndarray
    event: np.ndarray
    group: np.ndarray
    venue: np.ndarray
    columns: tuple = FEATURES

    def select(self, mask):
        return SampleTable(self.X[mask], self.y[mask], self.user[mask], self.event[mask],
                           self.group[mask], self.venue[mask], self.columns)

    def __len__(self):
        return int(self.y.size)


@dataclass
class EventFeatures:
    event_id: str
    group_id: str
    members: list  # event member order
    features: np.ndarray  # members x clusters x features, for the preference model
    social_g: float
    participation: np.ndarray
    winning: int | None
    final: int | None
    extras: dict = field(default_factory=dict)


def participation_counts(events) -> dict:
    """event_id -> per-member count of events they joined earlier."""
    history = {}
    out = {}
    for e in sorted(events, key=lambda e: (e.created_at, e.event_id)):
        out[e.event_id] = np.array([history.get(u, 0) for u in e.members], dtype=float)
        for u in e.members:
            history[u] = history.get(u, 0) + 1
    return out


def event_context(dataset, events=None, removed: dict | None = None, median_mobility=None):
    """(event_id, user) -> (mobility, weekend flag).

    Members listed in ``removed`` (group id -> user) get ``median_mobility``.
    """
    removed = removed or {}
    out = {}
    for e in events if events is not None else dataset.events:
        weekend = float(day_class(e.created_at, dataset.utc_offset) is DayClass.WEEKEND)
        for u in e.members:
            if removed.get(e.group_id) == u:
                mob = float(median_mobility)
            else:
                tr = dataset.traces.get(u)
                mob = mobility_48h(tr, e.created_at) if tr is not None else 0.0
            out[(e.event_id, u)] = (mob, weekend)
    return out


def median_mobility(context: dict) -> float:
    vals = [v[0] for v in context.values()]
    return float(np.median(vals)) if vals else 0.0


def _high(grid, point) -> float:
    return float(density_class(grid, point) is DensityClass.HIGH)


def assemble_samples(dataset, states: dict, context: dict) -> SampleTable:
    """Preference-model rows for every member and suggested venue."""
    rows, y, users, evs, grps, vids = [], [], [], [], [], []
    for e in dataset.events:
        st = states[e.group_id]
        for v in e.suggested:
            cid = assign_venue(v.location, st.clusters)
            dens = _high(dataset.density, v.location)
            for u in e.members:
                fam = 0.0 if cid is None else float(st.familiarity_of(u)[cid])
                mob, weekend = context[(e.event_id, u)]
                rows.append((fam, mob, weekend, dens))
                y.append(int(e.voted(u, v.venue_id)))
                users.append(u)
                evs.append(e.event_id)
                grps.append(e.group_id)
                vids.append(v.venue_id)
    X = np.array(rows, dtype=float).reshape(-1, len(FEATURES))
    obj = lambda a: np.array(a, dtype=object)  # noqa: E731
    return SampleTable(X, np.array(y, dtype=int), obj(users), obj(evs), obj(grps), obj(vids))


def event_features(dataset, states: dict, context: dict, participation: dict | None = None,
                   label_states: dict | None = None) -> list:
    """Per-event member-by-cluster feature cubes plus cluster labels.

    Labels come from ``label_states`` when given (so a reduced-data run can
    be scored against the clusters it detected itself).
    """
    participation = participation or participation_counts(dataset.events)
    label_states = label_states or states
    out = []
    for e in dataset.events:
        st = states[e.group_id]
        n = len(st.clusters)
        dens = np.array([_high(dataset.density, c.centroid) for c in st.clusters])
        cube = np.zeros((len(e.members), n, len(FEATURES)))
        for k, u in enumerate(e.members):
            mob, weekend = context[(e.event_id, u)]
            cube[k, :, 0] = st.familiarity_of(u)
            cube[k, :, 1] = mob
            cube[k, :, 2] = weekend
            cube[k, :, 3] = dens
        winning, final = label_clusters(e, label_states[e.group_id].clusters)
        out.append(EventFeatures(e.event_id, e.group_id, list(e.members), cube, st.social_g,
                                 participation[e.event_id], winning, final))
    return out


def preference_matrix(model, ev: EventFeatures) -> np.ndarray:
    m, n, f = ev.features.shape
    if n == 0:
        return np.zeros((m, 0))
    return np.clip(model.predict(ev.features.reshape(-1, f)).reshape(m, n), 0.0, 1.0)


@dataclass
class PipelineRun:
    states: dict
    rate_scale: float
    context: dict
    samples: SampleTable
    events: list  # EventFeatures


def run_pipeline(dataset, params: PipelineParams = PipelineParams(), threads: int = 1) -> PipelineRun:
    states, scale = analyze_groups(dataset, params, threads=threads)
    ctx = event_context(dataset)
    return PipelineRun(states, scale, ctx, assemble_samples(dataset, states, ctx),
                       event_features(dataset, states, ctx))
