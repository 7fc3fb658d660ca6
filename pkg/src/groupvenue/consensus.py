"""Aggregating member preferences into a group's cluster choice."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .clustering import assign_venue
from .preference import LogisticModel, Standardizer


class Strategy(str, Enum):
    LEAST_MISERY = "least_misery"
    AVERAGE = "average"
    MAX_SATISFACTION = "max_satisfaction"
    SOCIAL = "social"
    LOGREG = "logreg"
    EXPERTISE = "expertise"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, cls):
            return value
        aliases = {"least": "least_misery", "min": "least_misery", "mean": "average",
                   "avg": "average", "max": "max_satisfaction", "social_based": "social"}
        v = str(value).strip().lower().replace("-", "_")
        return cls(aliases.get(v, v))


@dataclass(frozen=True)
class ConsensusConfig:
    alpha: float = 0.6
    beta: float = 0.2
    strategy: Strategy = Strategy.SOCIAL

    def __post_init__(self):
        if not 0.0 <= self.beta <= self.alpha <= 1.0:
            raise ValueError(
                f"consensus thresholds need 0 <= beta <= alpha <= 1 (alpha={self.alpha}, beta={self.beta})"
            )


def _prefs(prefs) -> np.ndarray:
    P = np.asarray(prefs, dtype=float)
    if P.ndim != 2 or P.shape[0] == 0 or P.shape[1] == 0:
        raise ValueError("member preferences must be a non-empty members x clusters array")
    return P


def least_misery(prefs):
    return _prefs(prefs).min(axis=0)


def average(prefs):
    return _prefs(prefs).mean(axis=0)


def max_satisfaction(prefs):
    return _prefs(prefs).max(axis=0)


def expertise_weighted(prefs, participation):
    P = _prefs(prefs)
    w = 1.0 + np.asarray(participation, dtype=float)
    # scaled so equal weights are exactly 1 and the result matches the plain mean bit for bit
    w = w / w.max()
    return (w[:, None] * P).sum(axis=0) / w.sum()


def social_branch(social_g: float, config: ConsensusConfig = ConsensusConfig()) -> Strategy:
    if social_g < config.beta:
        return Strategy.LEAST_MISERY
    if social_g <= config.alpha:
        return Strategy.AVERAGE
    return Strategy.MAX_SATISFACTION


def social_based(prefs, social_g: float, config: ConsensusConfig = ConsensusConfig()):
    """Least misery for weakly tied groups, average in between, maximum
    satisfaction for closely tied ones."""
    return _SIMPLE[social_branch(social_g, config)](prefs)


_SIMPLE = {
    Strategy.LEAST_MISERY: least_misery,
    Strategy.AVERAGE: average,
    Strategy.MAX_SATISFACTION: max_satisfaction,
}


def summary_features(prefs) -> np.ndarray:
    """Per-cluster (min, mean, max) over members; rows are clusters."""
    P = _prefs(prefs)
    return np.column_stack((P.min(axis=0), P.mean(axis=0), P.max(axis=0)))


def normalize_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    total = s.sum()
    return s / total if total > 0 else s


@dataclass
class GroupInput:
    """What a consensus strategy sees for one event."""

    prefs: np.ndarray  # members x clusters
    social_g: float = 0.0
    participation: np.ndarray | None = None


def aggregate(strategy, prefs, *, social_g=None, participation=None, config=ConsensusConfig(),
              logreg=None, normalize=True) -> np.ndarray:
    """Group score per cluster under ``strategy``."""
    strategy = Strategy.parse(strategy)
    if strategy in _SIMPLE:
        out = _SIMPLE[strategy](prefs)
    elif strategy is Strategy.SOCIAL:
        if social_g is None:
            raise ValueError("social strategy needs the group's social strength")
        out = social_based(prefs, social_g, config)
    elif strategy is Strategy.EXPERTISE:
        part = np.zeros(_prefs(prefs).shape[0]) if participation is None else participation
        out = expertise_weighted(prefs, part)
    elif strategy is Strategy.LOGREG:
        if logreg is None:
            raise ValueError("logreg strategy needs a fitted LogRegConsensus")
        out = logreg.cluster_probabilities(prefs)
    else:  # pragma: no cover
        raise ValueError(strategy)
    return normalize_scores(out) if normalize else out


def predict_cluster(group_scores) -> int:
    """Index of the best cluster; the lower index wins ties."""
    s = np.asarray(group_scores, dtype=float)
    if s.size == 0:
        raise ValueError("no cluster scores")
    return int(np.argmax(s))


class LogRegConsensus(BaseEstimator, ClassifierMixin):
    """Logistic model of "this cluster is the group's pick" from the
    (min, mean, max) of member preferences."""

    def __init__(self, l2=1e-4):
        self.l2 = l2

    def fit(self, inputs, targets):
        rows, ys = [], []
        for gi, t in zip(inputs, targets):
            F = summary_features(gi.prefs if isinstance(gi, GroupInput) else gi)
            rows.append(F)
            y = np.zeros(F.shape[0], dtype=int)
            y[t] = 1
            ys.append(y)
        X = np.vstack(rows)
        y = np.concatenate(ys)
        self.scaler_ = Standardizer().fit(X)
        self.model_ = LogisticModel(self.l2).fit(self.scaler_.transform(X), y)
        return self

    def cluster_probabilities(self, prefs):
        F = self.scaler_.transform(summary_features(prefs))
        return self.model_.predict_proba(F)[:, 1]

    def predict(self, inputs):
        return np.array([predict_cluster(self.cluster_probabilities(
            gi.prefs if isinstance(gi, GroupInput) else gi)) for gi in inputs])


class GroupConsensus(BaseEstimator, ClassifierMixin):
    """sklearn-style wrapper: ``fit`` only matters for the logreg strategy."""

    def __init__(self, strategy="social", alpha=0.6, beta=0.2, l2=1e-4):
        self.strategy = strategy
        self.alpha = alpha
        self.beta = beta
        self.l2 = l2

    def fit(self, inputs, targets=None):
        self.config_ = ConsensusConfig(self.alpha, self.beta, Strategy.parse(self.strategy))
        self.logreg_ = None
        if self.config_.strategy is Strategy.LOGREG:
            self.logreg_ = LogRegConsensus(self.l2).fit(inputs, targets)
        return self

    def group_scores(self, gi: GroupInput, normalize=True):
        return aggregate(
            self.config_.strategy, gi.prefs, social_g=gi.social_g,
            participation=gi.participation, config=self.config_,
            logreg=self.logreg_, normalize=normalize,
        )

    def predict(self, inputs):
        return np.array([predict_cluster(self.group_scores(gi)) for gi in inputs], dtype=int)


def label_clusters(event, clusters):
    """(winning cluster, final cluster) of an event; either may be None.

    Votes count toward the cluster their venue falls within; vote ties go to
    the cluster whose first venue was suggested earliest. An event without
    any vote on a mappable venue has no winning cluster.
    """
    tally = {}
    first_seen = {}
    for v in event.suggested:
        cid = assign_venue(v.location, clusters)
        if cid is None:
            continue
        n_votes = sum(1 for u in event.members if event.voted(u, v.venue_id))
        tally[cid] = tally.get(cid, 0) + n_votes
        first_seen[cid] = min(first_seen.get(cid, v.suggested_at), v.suggested_at)
    winning = None
    if tally and max(tally.values()) > 0:
        winning = min(tally, key=lambda c: (-tally[c], first_seen[c], c))
    final = None
    fv = event.venue(event.final_venue_id) if event.final_venue_id else None
    if fv is not None:
        final = assign_venue(fv.location, clusters)
    return winning, final
