"""Two-layer user/cluster graph and the edge-weighted random walk with restart."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .clustering import NOISE

VISIT_BREAK_S = 3600


class RWRConvergenceError(RuntimeError):
    def __init__(self, iterate, residual):
        super().__init__(f"random walk did not converge (L1 residual {residual:.3g})")
        self.iterate = iterate
        self.residual = residual


def _row_normalize(M):
    M = np.asarray(M, dtype=float)
    s = M.sum(axis=1, keepdims=True)
    out = np.divide(M, s, out=np.zeros_like(M), where=s > 0)
    # an all-zero row (impossible with the uniform terms) falls back to uniform
    empty = (s[:, 0] <= 0)
    if empty.any():
        out[empty] = 1.0 / M.shape[1]
    return out


@dataclass
class TransitionGraph:
    users: list
    cluster_ids: list
    M_UC: np.ndarray
    M_CC: np.ndarray
    M_UU: np.ndarray
    alphas: tuple = (0.85, 0.85, 0.85)

    @property
    def m(self):
        return len(self.users)

    @property
    def n(self):
        return len(self.cluster_ids)

    def combined(self) -> np.ndarray:
        """Row-stochastic matrix over users followed by clusters.

        A user's outgoing mass is split evenly between the user and cluster
        blocks; cluster rows only lead to clusters.
        """
        m, n = self.m, self.n
        P = np.zeros((m + n, m + n))
        P[:m, :m] = 0.5 * self.M_UU
        P[:m, m:] = 0.5 * self.M_UC
        P[m:, m:] = self.M_CC
        return P

    def to_json(self) -> str:
        return json.dumps(
            {
                "users": [str(u) for u in self.users],
                "clusters": [int(c) for c in self.cluster_ids],
                "alphas": list(self.alphas),
                "M_UC": self.M_UC.tolist(),
                "M_CC": self.M_CC.tolist(),
                "M_UU": self.M_UU.tolist(),
            },
            indent=1,
        )


def visit_sequence(labels, timestamps, break_s=VISIT_BREAK_S) -> list:
    """Clusters of successive visits: maximal runs of clustered points at one
    cluster, split where reporting pauses for more than ``break_s``."""
    labels = np.asarray(labels)
    keep = labels != NOISE
    lab = labels[keep]
    ts = np.asarray(timestamps)[keep]
    if lab.size == 0:
        return []
    new = np.ones(lab.size, dtype=bool)
    new[1:] = (lab[1:] != lab[:-1]) | (np.diff(ts) > break_s)
    return lab[new].tolist()


def observed_days(timestamps) -> int:
    return int(np.unique(np.asarray(timestamps) // 86400).size)


def visit_rates(visits, n, days):
    """Per-day visit counts per cluster and transition counts between clusters."""
    v = np.zeros(n)
    t = np.zeros((n, n))
    if days <= 0:
        return v, t
    for c in visits:
        v[c] += 1
    for x, y in zip(visits[:-1], visits[1:]):
        if x != y:
            t[x, y] += 1
    return v / days, t / days


def build_transition_graph(users, n_clusters, visits: dict, days: dict, social, alphas=(0.85, 0.85, 0.85)):
    """Assemble the three edge matrices for one group.

    ``visits[u]`` is the user's visit sequence, ``days[u]`` their number of
    observed days and ``social`` the pairwise strength matrix in user order.
    """
    a1, a2, a3 = alphas
    m, n = len(users), n_clusters
    user_rate = np.zeros((m, n))
    trans_rate = np.zeros((n, n))
    for k, u in enumerate(users):
        v, t = visit_rates(visits.get(u, []), n, days.get(u, 0))
        user_rate[k] = v
        trans_rate += t

    per_cluster = user_rate.sum(axis=0)
    share = np.divide(user_rate, per_cluster, out=np.zeros_like(user_rate), where=per_cluster > 0)
    M_UC = _row_normalize(a1 * share + (1 - a1) / m)

    incoming = trans_rate.sum(axis=0)
    tshare = np.divide(trans_rate, incoming, out=np.zeros_like(trans_rate), where=incoming > 0)
    M_CC = _row_normalize(a2 * tshare + (1 - a2) / n)

    S = np.array(social, dtype=float).reshape(m, m)
    np.fill_diagonal(S, 0.0)
    M_UU = _row_normalize(a3 * S + (1 - a3) / m)
    return TransitionGraph(list(users), list(range(n)), M_UC, M_CC, M_UU, tuple(alphas))


def edge_rwr(graph: TransitionGraph, start, beta=0.85, tol=1e-8, max_iter=200) -> np.ndarray:
    """Cluster distribution of a restart walk from user ``start``.

    ``start`` is a user id or a user index. The cluster block of the
    stationary vector is returned renormalised to sum to one.
    """
    k = graph.users.index(start) if start in graph.users else int(start)
    P = graph.combined()
    PT = P.T
    e = np.zeros(P.shape[0])
    e[k] = 1.0
    x = e.copy()
    residual = np.inf
    for _ in range(max_iter):
        nxt = beta * (PT @ x) + (1 - beta) * e
        residual = np.abs(nxt - x).sum()
        x = nxt
        if residual < tol:
            break
    else:
        raise RWRConvergenceError(x, residual)
    block = x[graph.m:]
    total = block.sum()
    if total <= 0:
        return np.full(graph.n, 1.0 / graph.n)
    return block / total


class EdgeRWR(BaseEstimator):
    """Location familiarity of every member: one restart walk per user."""

    def __init__(self, beta=0.85, tol=1e-8, max_iter=200):
        self.beta = beta
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, graph: TransitionGraph, y=None):
        self.graph_ = graph
        self.familiarity_ = np.array(
            [edge_rwr(graph, k, self.beta, self.tol, self.max_iter) for k in range(graph.m)]
        ).reshape(graph.m, graph.n)
        return self

    def transform(self, user_ids):
        return np.array([self.familiarity_[self.graph_.users.index(u)] for u in user_ids])
