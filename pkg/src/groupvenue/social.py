"""Co-location meetings and social relationship strength between members."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .geo import LocationTrace, haversine_m

MEETING_RADIUS_M = 20.0
MEETING_MIN_S = 300
ALIGN_WINDOW_S = 150
# a longer pause between aligned samples means someone stopped reporting
MAX_ALIGNED_GAP_S = 600
DEFAULT_W1 = 0.8


class Meetings(NamedTuple):
    count: int
    rate: float
    overlap_days: int


def _nearest_in_time(ts_from, ts_to, window):
    """For each sample in ``ts_from`` the index of the closest sample in
    ``ts_to`` (earlier one on ties), or -1 beyond ``window`` seconds."""
    if ts_to.size == 0:
        return np.full(ts_from.size, -1, dtype=np.int64)
    j = np.searchsorted(ts_to, ts_from)
    left = np.clip(j - 1, 0, ts_to.size - 1)
    right = np.clip(j, 0, ts_to.size - 1)
    dl = np.abs(ts_from - ts_to[left])
    dr = np.abs(ts_to[right] - ts_from)
    best = np.where(dr < dl, right, left)
    gap = np.minimum(dl, dr)
    return np.where(gap <= window, best, -1)


def detect_meetings(
    a: LocationTrace,
    b: LocationTrace,
    radius=MEETING_RADIUS_M,
    min_duration=MEETING_MIN_S,
    window=ALIGN_WINDOW_S,
) -> Meetings:
    """Count co-location episodes of two users.

    Samples are aligned by nearest timestamp in both directions; an episode is
    a maximal run of aligned pairs all within ``radius`` lasting at least
    ``min_duration`` seconds. The rate is per day on which both users reported.
    """
    ta, tb = a.timestamps, b.timestamps
    days = np.intersect1d(np.unique(ta // 86400), np.unique(tb // 86400))
    if ta.size == 0 or tb.size == 0 or days.size == 0:
        return Meetings(0, 0.0, int(days.size))

    ja = _nearest_in_time(ta, tb, window)
    jb = _nearest_in_time(tb, ta, window)
    ia = np.flatnonzero(ja >= 0)
    ib = np.flatnonzero(jb >= 0)
    pairs = np.concatenate(
        (np.column_stack((ia, ja[ia])), np.column_stack((jb[ib], ib)))
    ).astype(np.int64)
    if pairs.size == 0:
        return Meetings(0, 0.0, int(days.size))
    pairs = np.unique(pairs, axis=0)
    i, j = pairs[:, 0], pairs[:, 1]
    t = (ta[i] + tb[j]) / 2.0
    order = np.lexsort((j, i, t))
    i, j, t = i[order], j[order], t[order]
    close = haversine_m(a.lat[i], a.lon[i], b.lat[j], b.lon[j]) <= radius

    brk = np.ones(t.size, dtype=bool)
    brk[1:] = (~close[1:]) | (~close[:-1]) | (np.diff(t) > MAX_ALIGNED_GAP_S)
    run = np.cumsum(brk) - 1
    count = 0
    if close.any():
        run_c = run[close]
        t_c = t[close]
        first = np.full(run.max() + 1, np.inf)
        last = np.full(run.max() + 1, -np.inf)
        np.minimum.at(first, run_c, t_c)
        np.maximum.at(last, run_c, t_c)
        valid = np.isfinite(first)
        count = int(np.count_nonzero(last[valid] - first[valid] >= min_duration))
    return Meetings(count, count / days.size, int(days.size))


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), 0.0, 1.0))


def pair_social(normalized_rate: float, loc_a, loc_b, w1: float = DEFAULT_W1) -> float:
    """Pairwise relationship strength from meeting rate and familiarity overlap."""
    return w1 * float(normalized_rate) + (1.0 - w1) * cosine(loc_a, loc_b)


def group_social(social) -> float:
    """Mean of the pairwise strengths above the diagonal of ``social``."""
    social = np.asarray(social, dtype=float)
    m = social.shape[0]
    if m < 2:
        raise ValueError("group social strength needs at least two members")
    iu = np.triu_indices(m, k=1)
    return float(2.0 * social[iu].sum() / (m * (m - 1)))


def social_matrix(user_ids, normalized_rates: dict, familiarity: dict, w1=DEFAULT_W1):
    """Symmetric matrix of pair strengths; the diagonal stays 0.

    ``normalized_rates`` maps ``frozenset({u, v})`` to the normalised meeting rate.
    """
    m = len(user_ids)
    out = np.zeros((m, m))
    for x in range(m):
        for y in range(x + 1, m):
            u, v = user_ids[x], user_ids[y]
            rate = normalized_rates.get(frozenset((u, v)), 0.0)
            out[x, y] = out[y, x] = pair_social(rate, familiarity[u], familiarity[v], w1)
    return out


def normalize_rates(rates: dict) -> dict:
    top = max(rates.values(), default=0.0)
    if top <= 0:
        return {k: 0.0 for k in rates}
    return {k: v / top for k, v in rates.items()}
