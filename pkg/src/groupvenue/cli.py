"""``groupvenue`` command line: generate, cluster, predict, recommend, evaluate.

Every config key has a flag named ``--<section>-<key>``; a flag beats the
value in the ``--config`` file, which beats the built-in default. All
outputs land under ``[paths] output_dir``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .clustering import cluster_key, write_cluster_dump
from .config import SCHEMA, ConfigError, RunConfig, load_config
from .consensus import Strategy
from .data import load_dataset, save_dataset
from .evaluation import (
    COLD_START_MODES,
    candidate_lists,
    cold_start_eval,
    evaluate_run,
    fit_folds,
    group_folds,
    predicted_clusters,
    recommend_all,
    score_events,
    sparsity_eval,
)
from .pipeline import analyze_groups, run_pipeline
from .synth import generate_world
from .venues import ProviderKind, make_provider, write_recommendations

log = logging.getLogger("groupvenue")

EXPERIMENTS = ("main", "cold_start", "sparsity", "all")


class MissingArtifact(ConfigError):
    pass


# --------------------------------------------------------------------------
# helpers


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    log.info("wrote %s", path)


def _require(cfg: RunConfig, keys):
    for key in keys:
        p = cfg.path(key)
        if not p.exists():
            raise MissingArtifact(
                f"missing {key} file {p}; run `groupvenue generate` with the same output dir "
                f"first, or point [paths] {key} (--paths-{key}) at an existing file"
            )


def _load(cfg: RunConfig, need_venues=False):
    keys = ["traces", "events"]
    if need_venues and ProviderKind(cfg.get("provider", "kind")) is not ProviderKind.HTTP:
        keys.append("venues")
    _require(cfg, keys)
    density = cfg.path("density")
    venues = cfg.path("venues")
    ds, rejected = load_dataset(
        cfg.path("traces"), cfg.path("events"),
        density if density.exists() else None,
        venues if venues.exists() else None,
        cfg.get("run", "utc_offset"), cfg.density_default(), cfg.get("run", "cell_size"),
    )
    if rejected:
        log.warning("%d trace records rejected; first: line %d (%s)", len(rejected), rejected[0].lineno,
                    rejected[0].reason)
    return ds


def _scores(cfg: RunConfig, ds):
    """Out-of-fold group scores for every event plus the fitted run."""
    ecfg = cfg.evaluation()
    run = run_pipeline(ds, cfg.pipeline(), ecfg.threads)
    folds = group_folds(run, ecfg.folds, ecfg.seed)
    models = fit_folds(run, folds, ecfg)
    return run, score_events(models, folds, run.events, ecfg)


# --------------------------------------------------------------------------
# commands


def cmd_generate(cfg: RunConfig, args=None) -> int:
    ds, truth = generate_world(cfg.world())
    out = cfg.output_dir
    paths = save_dataset(ds, out / "data")
    _write(out / "truth.json", truth.to_json())
    _write(out / "world.json", json.dumps(cfg.world().to_dict(), indent=1, sort_keys=True) + "\n")
    print(f"generated {len(ds.events)} events for {len(ds.groups())} groups under {paths['traces'].parent}")
    return 0


def cmd_cluster(cfg: RunConfig, args=None) -> int:
    ds = _load(cfg)
    states, scale = analyze_groups(ds, cfg.pipeline(), threads=cfg.threads)
    out = cfg.output_dir / "clusters"
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "clusters.csv", "w", encoding="utf-8", newline="") as fc, \
            open(out / "cluster_counts.csv", "w", encoding="utf-8", newline="") as fn:
        write_cluster_dump({g: s.clusters for g, s in states.items()}, fc, fn)
    lines = ["group_id,user_id,cluster_id,familiarity"]
    groups = {}
    for gid in sorted(states):
        st = states[gid]
        for i, u in enumerate(st.members):
            for c in st.clusters:
                lines.append(f"{gid},{u},{cluster_key(gid, c.cluster_id)},{st.familiarity[i, c.cluster_id]:.9f}")
        groups[gid] = {
            "members": st.members,
            "clusters": len(st.clusters),
            "social_g": round(st.social_g, 9),
            "social": np.round(st.social, 9).tolist(),
        }
    _write(out / "familiarity.csv", "\n".join(lines) + "\n")
    _write(out / "groups.json", json.dumps({"rate_scale": scale, "groups": groups}, indent=1, sort_keys=True) + "\n")
    print(f"{sum(len(s.clusters) for s in states.values())} clusters in {len(states)} groups -> {out}")
    return 0


def cmd_predict(cfg: RunConfig, args) -> int:
    strategy = Strategy.parse(args.strategy or cfg.get("consensus", "strategy"))
    ds = _load(cfg)
    run, scores = _scores(cfg, ds)
    preds = predicted_clusters(scores)[strategy]
    lines = ["event_id,group_id,cluster_id,score,predicted"]
    for ev in run.events:
        s = scores[ev.event_id][strategy]
        for c, v in enumerate(s):
            lines.append(f"{ev.event_id},{ev.group_id},{cluster_key(ev.group_id, c)},{v:.9f},"
                         f"{int(preds[ev.event_id] == c)}")
    out = cfg.output_dir / f"predictions_{strategy.value}.csv"
    _write(out, "\n".join(lines) + "\n")
    model = cfg.evaluation().preference_model().fit(run.samples.X, run.samples.y)
    _write(cfg.output_dir / "preference_model.json", model.to_json() + "\n")
    print(f"{len(run.events)} events scored with {strategy.value} -> {out}")
    return 0


def cmd_recommend(cfg: RunConfig, args) -> int:
    strategy = Strategy.parse(args.strategy or cfg.get("consensus", "strategy"))
    n = args.top_n
    if n < 1:
        raise ConfigError("--top-n must be >= 1")
    ds = _load(cfg, need_venues=True)
    provider = make_provider(cfg.provider(), ds.venues)
    run, scores = _scores(cfg, ds)
    lists = candidate_lists(run, provider, cfg.threads)
    recs = recommend_all(ds.events, scores, lists, strategy, n)
    out = cfg.output_dir / "recommendations.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as f:
        write_recommendations(((e.event_id, recs[e.event_id]) for e in ds.events), f)
    print(f"top-{n} lists for {len(recs)} events -> {out}")
    return 0


def _emit(cfg: RunConfig, report, as_json: bool, timing: dict):
    out = cfg.output_dir / "reports"
    _write(out / f"{report.name}.csv", report.to_csv())
    _write(out / f"{report.name}.txt", report.to_text())
    if report.metrics:
        _write(out / f"{report.name}_metrics.csv", report.metrics_csv())
    if as_json:
        _write(out / f"{report.name}.json", report.to_json())
    timing[report.name] = round(report.runtime, 3)
    print(report.to_text())


def cmd_evaluate(cfg: RunConfig, args) -> int:
    experiment = args.experiment
    ds = _load(cfg, need_venues=True)
    ecfg = cfg.evaluation()
    params = cfg.pipeline()
    provider = make_provider(cfg.provider(), ds.venues)
    timing = {}
    t0 = time.perf_counter()
    run = run_pipeline(ds, params, ecfg.threads)
    timing["pipeline"] = round(time.perf_counter() - t0, 3)
    if experiment in ("main", "all"):
        _emit(cfg, evaluate_run(ds, run, provider, ecfg, "main"), args.json, timing)
    if experiment in ("cold_start", "all"):
        for mode in COLD_START_MODES:
            try:
                rep = cold_start_eval(ds, mode, run, ecfg, params)
            except ValueError as exc:
                log.warning("cold start %s skipped: %s", mode, exc)
                continue
            _emit(cfg, rep, args.json, timing)
    if experiment in ("sparsity", "all"):
        for rep in sparsity_eval(ds, provider, cfg=ecfg, params=params).values():
            _emit(cfg, rep, args.json, timing)
    timing["total"] = round(time.perf_counter() - t0, 3)
    # wall-clock numbers live apart from the reports so those stay reproducible
    _write(cfg.output_dir / "timing.json", json.dumps(timing, indent=1) + "\n")
    return 0


COMMANDS = {
    "generate": (cmd_generate, "write a planted synthetic world (dataset files plus truth.json)"),
    "cluster": (cmd_cluster, "detect location clusters, social strength and familiarity per group"),
    "predict": (cmd_predict, "score every event's clusters under one consensus strategy"),
    "recommend": (cmd_recommend, "write top-N venue lists per event"),
    "evaluate": (cmd_evaluate, "run the accuracy, hit-rate, cold-start and sparsity experiments"),
}


# --------------------------------------------------------------------------
# argument parsing


def _flag(section, key):
    return f"--{section}-{key}".replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="INI", help="INI file with the sections below")
    for section, keys in SCHEMA.items():
        g = p.add_argument_group(f"[{section}]")
        for key, (_, default, text) in keys.items():
            shown = ",".join(f"{x:g}" for x in default) if isinstance(default, tuple) else default
            names = [_flag(section, key)]
            if (section, key) == ("run", "threads"):
                names.append("--threads")
            if (section, key) == ("run", "seed"):
                names.append("--seed")
            g.add_argument(*names, dest=f"{section}.{key}", metavar="VALUE",
                           help=f"{text} (default: {shown!r})")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groupvenue", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text)
        if name in ("predict", "recommend"):
            p.add_argument("--strategy", choices=[s.value for s in Strategy],
                           help="consensus strategy (default: [consensus] strategy)")
        if name == "recommend":
            p.add_argument("--top-n", type=int, default=10, help="list length per event (default: 10)")
        if name == "evaluate":
            p.add_argument("--experiment", choices=EXPERIMENTS, default="main",
                           help="which experiment to run (default: main)")
            p.add_argument("--json", action="store_true", help="also write each report as JSON")
        _add_config_flags(p)
    return parser


def config_from_args(args) -> RunConfig:
    overrides = {}
    for section, keys in SCHEMA.items():
        for key in keys:
            v = getattr(args, f"{section}.{key}", None)
            if v is not None:
                overrides[(section, key)] = v
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command][0](cfg, args)
    except ConfigError as exc:
        print(f"groupvenue {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 (any failure past validation is a runtime error)
        log.debug("runtime failure", exc_info=True)
        print(f"groupvenue {args.command}: runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
