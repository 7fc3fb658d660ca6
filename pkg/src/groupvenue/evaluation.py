"""Cross-validated experiments: cluster accuracy, hit rates, cold start, sparsity."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .clustering import cluster_key
from .consensus import ConsensusConfig, LogRegConsensus, Strategy, aggregate, predict_cluster
from .pipeline import (
    PipelineParams,
    analyze_groups,
    event_context,
    event_features,
    median_mobility,
    preference_matrix,
    run_pipeline,
)
from .preference import PreferenceModel, auc, best_threshold, f1_at, unit_folds
from .synth import corrupt
from .venues import BaselineMode, baseline_lists, fetch_all, recommend_topn

STRATEGIES = (
    Strategy.LEAST_MISERY,
    Strategy.AVERAGE,
    Strategy.MAX_SATISFACTION,
    Strategy.SOCIAL,
    Strategy.LOGREG,
    Strategy.EXPERTISE,
)
BASELINES = tuple(BaselineMode)
HIT_NS = (5, 10, 15, 20)
HIT_MODES = ("final", "one")
SPARSITY_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)
COLD_START_MODES = ("host", "random_member", "last_member")


@dataclass(frozen=True)
class EvalConfig:
    folds: int = 5
    seed: int = 0
    learner: str = "cart"
    max_depth: int = 6
    min_leaf: int = 5
    l2: float = 1e-4
    consensus: ConsensusConfig = ConsensusConfig()
    hit_ns: tuple = HIT_NS
    threads: int = 1

    def preference_model(self, learner=None):
        return PreferenceModel(learner or self.learner, self.max_depth, self.min_leaf, self.l2, self.seed)


# --------------------------------------------------------------------------
# scoring primitives


def mean_se(values):
    """Mean and standard error of per-fold values."""
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def cluster_accuracy(predicted: dict, labels: dict, fold_of: dict | None = None, k: int | None = None):
    """Accuracy of predicted clusters against ``labels`` (event -> cluster or None).

    Events labelled None are left out. With ``fold_of`` (event -> fold) the
    result is the mean and standard error over folds; otherwise a single
    pooled value with standard error 0.
    """
    scorable = [e for e, lab in labels.items() if lab is not None and e in predicted]
    if not scorable:
        raise ValueError("no scorable events")
    if fold_of is None:
        return float(np.mean([predicted[e] == labels[e] for e in scorable])), 0.0
    k = k if k is not None else max(fold_of.values()) + 1
    per_fold = []
    for f in range(k):
        hits = [predicted[e] == labels[e] for e in scorable if fold_of[e] == f]
        per_fold.append(float(np.mean(hits)) if hits else float("nan"))
    return mean_se(per_fold)


def hit_rate(recommendations: dict, events, n: int, mode: str = "final") -> float:
    """Share of events whose top-``n`` list holds the final venue (``final``)
    or any suggested venue (``one``)."""
    events = list(events)
    if not events:
        return 0.0
    hits = 0
    for e in events:
        top = set(recommendations.get(e.event_id, [])[:n])
        if mode == "final":
            hits += e.final_venue_id in top
        elif mode == "one":
            hits += bool(top & {v.venue_id for v in e.suggested})
        else:
            raise ValueError(f"unknown hit-rate mode {mode!r}")
    return hits / len(events)


# --------------------------------------------------------------------------
# reports


@dataclass
class ModelRow:
    model: str
    accuracy_winning: tuple = (float("nan"), float("nan"))
    accuracy_final: tuple = (float("nan"), float("nan"))
    hit_rate: dict = field(default_factory=dict)  # (mode, n) -> rate


@dataclass
class ExperimentReport:
    name: str
    rows: list = field(default_factory=list)
    metrics: list = field(default_factory=list)  # (model, fold, auc, f1)
    counts: dict = field(default_factory=dict)
    by_size: list = field(default_factory=list)  # (model, group size, accuracy, events)
    runtime: float = 0.0  # seconds; deliberately not written to report files

    def row(self, model) -> ModelRow:
        for r in self.rows:
            if r.model == model:
                return r
        raise KeyError(model)

    # -- writers -------------------------------------------------------

    def _columns(self, hit_ns):
        cols = ["model", "accuracy_winning", "se_winning", "accuracy_final", "se_final"]
        cols += [f"hit_{m}@{n}" for m in HIT_MODES for n in hit_ns]
        return cols

    def _hit_ns(self):
        ns = sorted({n for r in self.rows for (_, n) in r.hit_rate})
        return ns or list(HIT_NS)

    def table(self):
        ns = self._hit_ns()
        out = [self._columns(ns)]
        for r in self.rows:
            cells = [r.model, *r.accuracy_winning, *r.accuracy_final]
            cells += [r.hit_rate.get((m, n), float("nan")) for m in HIT_MODES for n in ns]
            out.append([cells[0]] + ["" if isinstance(c, float) and math.isnan(c) else f"{c:.4f}"
                                     for c in cells[1:]])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(self.table())
        return buf.getvalue()

    def to_text(self) -> str:
        rows = self.table()
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = [f"{self.name}"]
        for k, v in sorted(self.counts.items()):
            lines.append(f"  {k}: {v}")
        for i, r in enumerate(rows):
            lines.append("  ".join(c.rjust(w) if i and j else c.ljust(w) for j, (c, w) in enumerate(zip(r, widths))))
        return "\n".join(lines) + "\n"

    def metrics_csv(self) -> str:
        lines = ["model,fold,auc,f1"]
        lines += [f"{m},{f},{a:.4f},{f1:.4f}" for m, f, a, f1 in self.metrics]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        def clean(x):
            return None if isinstance(x, float) and math.isnan(x) else x

        return {
            "name": self.name,
            "counts": dict(sorted(self.counts.items())),
            "models": [
                {
                    "model": r.model,
                    "accuracy_winning": [clean(x) for x in r.accuracy_winning],
                    "accuracy_final": [clean(x) for x in r.accuracy_final],
                    "hit_rate": {f"{m}@{n}": v for (m, n), v in sorted(r.hit_rate.items())},
                }
                for r in self.rows
            ],
            "metrics": [{"model": m, "fold": f, "auc": a, "f1": f1} for m, f, a, f1 in self.metrics],
            "by_size": [{"model": m, "size": s, "accuracy": a, "events": n} for m, s, a, n in self.by_size],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# cross-fitting


def group_folds(run, k=5, seed=0) -> dict:
    """Fold per group. Groups never share members here, so folds are
    user-disjoint; balanced on the groups' vote rates."""
    S = run.samples
    groups = sorted(run.states)
    rates = [float(S.y[S.group == g].mean()) if (S.group == g).any() else 0.0 for g in groups]
    return unit_folds(groups, rates, k, seed)


@dataclass
class FoldModels:
    preference: list  # one PreferenceModel per fold
    logreg: list  # one LogRegConsensus per fold (None when no training labels)
    metrics: list


def fit_folds(run, folds: dict, cfg: EvalConfig) -> FoldModels:
    S = run.samples
    fold_of_sample = np.array([folds[g] for g in S.group], dtype=int)
    prefs, lrs, metrics = [], [], []
    for f in range(cfg.folds):
        train = fold_of_sample != f
        test = ~train
        model = cfg.preference_model().fit(S.X[train], S.y[train])
        prefs.append(model)
        for learner in ("cart", "logreg"):
            m = model if learner == cfg.learner else cfg.preference_model(learner).fit(S.X[train], S.y[train])
            if test.any() and 0 < S.y[test].sum() < test.sum():
                thr = best_threshold(m.predict(S.X[train]), S.y[train])
                scores = m.predict(S.X[test])
                metrics.append((learner, f, auc(scores, S.y[test]), f1_at(scores, S.y[test], thr)))
        train_events = [ev for ev in run.events if folds[ev.group_id] != f and ev.winning is not None
                        and ev.features.shape[1] > 0]
        lr = None
        if train_events:
            lr = LogRegConsensus(cfg.l2).fit([preference_matrix(model, ev) for ev in train_events],
                                             [ev.winning for ev in train_events])
        lrs.append(lr)
    metrics.sort(key=lambda r: (r[0], r[1]))
    return FoldModels(prefs, lrs, metrics)


def score_events(models: FoldModels, folds: dict, events, cfg: EvalConfig) -> dict:
    """event_id -> {strategy: normalised group scores}, each event scored by
    the models of the fold that held its group out."""
    out = {}
    for ev in events:
        f = folds[ev.group_id]
        n = ev.features.shape[1]
        if n == 0:
            out[ev.event_id] = {s: np.zeros(0) for s in STRATEGIES}
            continue
        P = preference_matrix(models.preference[f], ev)
        scores = {}
        for s in STRATEGIES:
            if s is Strategy.LOGREG and models.logreg[f] is None:
                scores[s] = aggregate(Strategy.AVERAGE, P)
                continue
            scores[s] = aggregate(s, P, social_g=ev.social_g, participation=ev.participation,
                                  config=cfg.consensus, logreg=models.logreg[f])
        out[ev.event_id] = scores
    return out


def predicted_clusters(scores: dict) -> dict:
    """strategy -> {event_id: predicted cluster or None}."""
    out = {s: {} for s in STRATEGIES}
    for e, per in scores.items():
        for s, v in per.items():
            out[s][e] = predict_cluster(v) if v.size else None
    return out


# --------------------------------------------------------------------------
# recommendations


def candidate_lists(run, provider, threads=1) -> dict:
    """group_id -> per-cluster candidate lists."""
    out = {}
    for gid in sorted(run.states):
        st = run.states[gid]
        out[gid] = fetch_all(provider, st.clusters, [cluster_key(gid, c.cluster_id) for c in st.clusters], threads)
    return out


def recommend_all(events, scores: dict, lists: dict, strategy, n: int) -> dict:
    """event_id -> ranked ``(venue, score)`` pairs under ``strategy``."""
    out = {}
    for e in events:
        gl = lists.get(e.group_id, [])
        s = scores[e.event_id][strategy]
        out[e.event_id] = recommend_topn(gl, s, n) if gl and s.size else []
    return out


def baseline_all(events, lists: dict, provider, mode, n: int) -> dict:
    mode = BaselineMode(mode)
    out = {}
    for e in events:
        if mode is BaselineMode.EQUAL_WEIGHTED:
            out[e.event_id] = [v.venue_id for v in baseline_lists(mode, lists.get(e.group_id, []), n)]
        else:
            out[e.event_id] = [v.venue_id for v in baseline_lists(mode, provider.city(e.city), n)]
    return out


# --------------------------------------------------------------------------
# experiments


def _accuracy_rows(events, preds, folds, cfg, rows=None, denominators=None):
    """Fill accuracy cells per strategy; ``denominators`` (target -> labels)
    overrides which events count and with which labels."""
    rows = rows if rows is not None else {s.value: ModelRow(s.value) for s in STRATEGIES}
    fold_of = {ev.event_id: folds[ev.group_id] for ev in events}
    for target in ("winning", "final"):
        labels = denominators[target] if denominators else {ev.event_id: getattr(ev, target) for ev in events}
        for s in STRATEGIES:
            pred = {e: (-1 if c is None else c) for e, c in preds[s].items()}
            try:
                acc = cluster_accuracy(pred, labels, fold_of, cfg.folds)
            except ValueError:
                acc = (float("nan"), float("nan"))
            setattr(rows[s.value], f"accuracy_{target}", acc)
    return rows


def _by_size(events, preds):
    out = []
    sizes = sorted({len(ev.members) for ev in events})
    for s in (Strategy.SOCIAL, Strategy.AVERAGE):
        for size in sizes:
            hits = [preds[s][ev.event_id] == ev.winning for ev in events
                    if len(ev.members) == size and ev.winning is not None]
            if hits:
                out.append((s.value, size, round(float(np.mean(hits)), 4), len(hits)))
    return out


def evaluate_run(dataset, run, provider, cfg: EvalConfig = EvalConfig(), name="main",
                 hits: bool = True) -> ExperimentReport:
    t0 = time.perf_counter()
    folds = group_folds(run, cfg.folds, cfg.seed)
    models = fit_folds(run, folds, cfg)
    scores = score_events(models, folds, run.events, cfg)
    preds = predicted_clusters(scores)
    rows = _accuracy_rows(run.events, preds, folds, cfg)
    report = ExperimentReport(name, metrics=models.metrics)
    report.counts = {
        "events": len(run.events),
        "groups": len(run.states),
        "events_without_winning_cluster": sum(ev.winning is None for ev in run.events),
        "events_without_final_cluster": sum(ev.final is None for ev in run.events),
        "preference_samples": len(run.samples),
    }
    report.by_size = _by_size(run.events, preds)
    if hits:
        top = max(cfg.hit_ns)
        lists = candidate_lists(run, provider, cfg.threads)
        for s in STRATEGIES:
            recs = recommend_all(dataset.events, scores, lists, s, top)
            ids = {e: [v.venue_id for v, _ in r] for e, r in recs.items()}
            for mode in HIT_MODES:
                for n in cfg.hit_ns:
                    rows[s.value].hit_rate[(mode, n)] = hit_rate(ids, dataset.events, n, mode)
        for b in BASELINES:
            row = ModelRow(b.value)
            ids = baseline_all(dataset.events, lists, provider, b, top)
            for mode in HIT_MODES:
                for n in cfg.hit_ns:
                    row.hit_rate[(mode, n)] = hit_rate(ids, dataset.events, n, mode)
            rows[b.value] = row
    report.rows = list(rows.values())
    report.runtime = time.perf_counter() - t0
    return report


def evaluate(dataset, provider, cfg: EvalConfig = EvalConfig(), params: PipelineParams = PipelineParams(),
             run=None) -> ExperimentReport:
    run = run or run_pipeline(dataset, params, cfg.threads)
    return evaluate_run(dataset, run, provider, cfg)


def removal_plan(dataset, mode: str, seed: int = 0) -> dict:
    """group_id -> member withheld under a cold-start mode."""
    if mode not in COLD_START_MODES:
        raise ValueError(f"unknown cold-start mode {mode!r}")
    rng = np.random.default_rng(seed)
    plan = {}
    first = {}
    for e in sorted(dataset.events, key=lambda e: (e.created_at, e.event_id)):
        first.setdefault(e.group_id, e)
    for gid in sorted(first):
        e = first[gid]
        if len(e.members) < 3:
            continue
        if mode == "host":
            plan[gid] = e.host
        elif mode == "last_member":
            if not e.join_order_known:
                raise ValueError(f"event {e.event_id} has no join order; last_member mode needs it")
            plan[gid] = e.members[-1]
        else:
            plan[gid] = e.members[int(rng.integers(len(e.members)))]
    return plan


def cold_start_eval(dataset, mode: str, run=None, cfg: EvalConfig = EvalConfig(),
                    params: PipelineParams = PipelineParams()) -> ExperimentReport:
    """Withhold one member's whole trace per group and re-score.

    Models are fit on complete training groups; only the held-out groups are
    re-analysed. Events that lose their cluster label count as misses.
    """
    t0 = time.perf_counter()
    run = run or run_pipeline(dataset, params, cfg.threads)
    plan = removal_plan(dataset, mode, cfg.seed)
    folds = group_folds(run, cfg.folds, cfg.seed)
    models = fit_folds(run, folds, cfg)
    reduced, _ = analyze_groups(dataset, params, removed=plan, rate_scale=run.rate_scale, threads=cfg.threads)
    ctx = event_context(dataset, removed=plan, median_mobility=median_mobility(run.context))
    events = [ev for ev in event_features(dataset, reduced, ctx, label_states=reduced)
              if ev.group_id in plan]
    full = {ev.event_id: ev for ev in run.events}
    scores = score_events(models, folds, events, cfg)
    preds = predicted_clusters(scores)
    denominators = {}
    for target in ("winning", "final"):
        # full-data scorable events; a label lost under reduced data can never be hit
        denominators[target] = {
            ev.event_id: (getattr(ev, target) if getattr(ev, target) is not None else -2)
            for ev in events if getattr(full[ev.event_id], target) is not None
        }
    rows = _accuracy_rows(events, preds, folds, cfg, denominators=denominators)
    report = ExperimentReport(f"cold_start_{mode}", rows=list(rows.values()))
    report.counts = {
        "groups_with_member_removed": len(plan),
        "events": len(events),
        "events_lost_winning_cluster": sum(ev.winning is None and full[ev.event_id].winning is not None
                                           for ev in events),
    }
    report.by_size = _by_size(events, preds)
    report.runtime = time.perf_counter() - t0
    return report


def sparsity_eval(dataset, provider, fractions=SPARSITY_FRACTIONS, cfg: EvalConfig = EvalConfig(),
                  params: PipelineParams = PipelineParams()) -> dict:
    """fraction -> report, each from the full pipeline on the trace prefixes."""
    out = {}
    for fr in fractions:
        t0 = time.perf_counter()
        ds = corrupt(dataset, fr)
        rep = evaluate_run(ds, run_pipeline(ds, params, cfg.threads), provider, cfg, name=f"sparsity_{fr:g}")
        rep.runtime = time.perf_counter() - t0
        out[fr] = rep
    return out
