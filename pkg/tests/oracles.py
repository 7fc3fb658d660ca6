"""Slow reference implementations the fast code paths are checked against."""

import numpy as np

from groupvenue.geo import haversine_m


def naive_dbscan(lat, lon, radius, min_samples):
    """Textbook O(n^2) DBSCAN with a FIFO expansion in scan order."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    n = lat.size
    dist = haversine_m(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    neighbours = [np.flatnonzero(dist[i] <= radius).tolist() for i in range(n)]
    UNSEEN, NOISE = -2, -1
    labels = [UNSEEN] * n
    cluster = -1
    for p in range(n):
        if labels[p] != UNSEEN:
            continue
        if len(neighbours[p]) < min_samples:
            labels[p] = NOISE
            continue
        cluster += 1
        labels[p] = cluster
        queue = list(neighbours[p])
        i = 0
        while i < len(queue):
            q = queue[i]
            i += 1
            if labels[q] == NOISE:
                labels[q] = cluster
            if labels[q] != UNSEEN:
                continue
            labels[q] = cluster
            if len(neighbours[q]) >= min_samples:
                queue.extend(neighbours[q])
    return np.array(labels)


def canonical(labels):
    """Relabel clusters by first appearance so labelings compare up to permutation."""
    mapping = {}
    out = []
    for lab in labels:
        if lab < 0:
            out.append(-1)
            continue
        mapping.setdefault(lab, len(mapping))
        out.append(mapping[lab])
    return np.array(out)


def dense_rwr(P, start, beta):
    """Stationary restart-walk distribution by a direct linear solve."""
    n = P.shape[0]
    e = np.zeros(n)
    e[start] = 1.0
    return np.linalg.solve(np.eye(n) - beta * P.T, (1 - beta) * e)


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))
