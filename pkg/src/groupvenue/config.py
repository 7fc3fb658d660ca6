"""Run configuration: one INI file, every key also settable by a flag."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass
from pathlib import Path

from .clustering import DbscanParams
from .consensus import ConsensusConfig, Strategy
from .evaluation import EvalConfig
from .geo import DensityClass
from .pipeline import PipelineParams
from .synth import WorldConfig
from .venues import ProviderConfig, ProviderKind


class ConfigError(ValueError):
    """Invalid configuration or missing input; the CLI exits with status 1."""


def _pair(text):
    parts = [int(x) for x in str(text).replace("-", ",").split(",") if x.strip()]
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2:
        raise ValueError(f"expected 'low,high', got {text!r}")
    return tuple(parts)


def _fractions(text):
    return tuple(float(x) for x in str(text).split(","))


# section -> key -> (type, default, help)
SCHEMA = {
    "paths": {
        "output_dir": (str, "out", "directory every command writes under"),
        "traces": (str, "", "trace CSV (default: <output_dir>/data/traces.csv)"),
        "events": (str, "", "events JSON (default: <output_dir>/data/events.json)"),
        "density": (str, "", "density grid CSV (default: <output_dir>/data/density.csv)"),
        "venues": (str, "", "venue fixture JSON (default: <output_dir>/data/venues.json)"),
    },
    "run": {
        "seed": (int, 0, "seed for every randomised stage"),
        "utc_offset": (int, 0, "local time offset in seconds for the weekday/weekend feature"),
        "density_default": (str, "low", "density class of unmapped cells (low or high)"),
        "cell_size": (float, 0.01, "density grid cell size in degrees"),
        "threads": (int, 0, "parallelism cap; 0 means all available cores"),
    },
    "dbscan": {
        "radius": (float, 20.0, "neighbourhood radius in metres"),
        "min_samples": (int, 40, "points (self included) that make a core point"),
    },
    "social": {
        "w1": (float, 0.8, "weight of the meeting rate against familiarity overlap"),
        "beta": (float, 0.85, "continuation probability of the familiarity walk"),
    },
    "consensus": {
        "alpha": (float, 0.6, "social strength above which maximum satisfaction applies"),
        "beta": (float, 0.2, "social strength below which least misery applies"),
        "strategy": (str, "social", "default strategy for predict/recommend"),
    },
    "model": {
        "learner": (str, "cart", "individual preference learner: cart or logreg"),
        "max_depth": (int, 6, "tree depth limit"),
        "min_leaf": (int, 5, "minimum training samples per leaf"),
        "l2": (float, 1e-4, "L2 penalty of the logistic models"),
        "folds": (int, 5, "cross-validation folds"),
    },
    "provider": {
        "kind": (str, "catalog", "venue source: fixture, catalog or http"),
        "radius": (float, 500.0, "search radius around a cluster centroid in metres"),
        "limit": (int, 50, "venues requested per cluster"),
        "base_url": (str, "", "base URL of the http provider"),
    },
    "world": {
        "n_groups": (int, 200, "groups to generate"),
        "group_size_range": (_pair, (3, 6), "members per group, low,high"),
        "clusters_per_group": (_pair, (3, 6), "frequented places per group, low,high"),
        "points_per_user": (int, 2000, "trace points per member"),
        "cluster_sigma": (float, 8.0, "scatter of points around a place in metres"),
        "social_regimes": (_fractions, (1 / 3, 1 / 3, 1 / 3), "fractions of low,mid,high social groups"),
        "vote_noise": (float, 0.02, "probability of flipping each vote"),
        "events_per_group": (_pair, (1, 3), "events per group, low,high"),
        "balance": (float, 1.0, "pull of each group's total time per place toward an even split"),
        "conformity": (float, 0.5, "weight of the group decision in each vote"),
    },
}


def _fmt(value):
    if isinstance(value, tuple):
        return ",".join(f"{v:g}" if isinstance(v, float) else str(v) for v in value)
    return str(value)


@dataclass
class RunConfig:
    values: dict  # section -> key -> typed value

    def get(self, section, key):
        return self.values[section][key]

    # -- derived objects -----------------------------------------------

    @property
    def output_dir(self) -> Path:
        return Path(self.get("paths", "output_dir"))

    def path(self, key) -> Path:
        explicit = self.get("paths", key)
        if explicit:
            return Path(explicit)
        from .data import DATASET_FILES

        return self.output_dir / "data" / DATASET_FILES[key]

    @property
    def threads(self) -> int:
        t = self.get("run", "threads")
        return t if t > 0 else (os.cpu_count() or 1)

    def dbscan(self) -> DbscanParams:
        return DbscanParams(self.get("dbscan", "radius"), self.get("dbscan", "min_samples"))

    def pipeline(self) -> PipelineParams:
        return PipelineParams(self.dbscan(), w1=self.get("social", "w1"), beta=self.get("social", "beta"))

    def consensus(self) -> ConsensusConfig:
        return ConsensusConfig(self.get("consensus", "alpha"), self.get("consensus", "beta"),
                               Strategy.parse(self.get("consensus", "strategy")))

    def provider(self) -> ProviderConfig:
        return ProviderConfig(
            ProviderKind(self.get("provider", "kind")),
            self.get("provider", "radius"),
            self.get("provider", "limit"),
            self.get("provider", "base_url") or None,
            str(self.path("venues")),
        )

    def evaluation(self) -> EvalConfig:
        m = self.values["model"]
        return EvalConfig(m["folds"], self.get("run", "seed"), m["learner"], m["max_depth"], m["min_leaf"],
                          m["l2"], self.consensus(), threads=self.threads)

    def world(self) -> WorldConfig:
        w = dict(self.values["world"])
        return WorldConfig(seed=self.get("run", "seed"), utc_offset=self.get("run", "utc_offset"),
                           dbscan_radius=self.get("dbscan", "radius"), **w)

    def density_default(self) -> DensityClass:
        return DensityClass[self.get("run", "density_default").upper()]

    def validate(self):
        """Build every derived object once so bad values fail early."""
        try:
            self.dbscan()
            self.consensus()
            self.provider()
            self.world()
            self.density_default()
            if self.get("model", "learner") not in ("cart", "logreg"):
                raise ValueError(f"unknown learner {self.get('model', 'learner')!r}")
            if self.get("model", "folds") < 2:
                raise ValueError("model.folds must be >= 2")
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None
        return self

    def to_ini(self) -> str:
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                lines.append(f"{key} = {_fmt(self.values[section][key])}")
            lines.append("")
        return "\n".join(lines)


def defaults() -> dict:
    return {s: {k: entry[1] for k, entry in keys.items()} for s, keys in SCHEMA.items()}


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the INI file, then ``overrides`` ((section, key) -> text)."""
    values = defaults()
    raw = {}
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file {path} does not exist")
        parser = configparser.ConfigParser()
        parser.read(path, encoding="utf-8")
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, text in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                raw[(section, key)] = text
    raw.update(overrides or {})
    for (section, key), text in raw.items():
        if text is None:
            continue
        typ = SCHEMA[section][key][0]
        try:
            values[section][key] = typ(text) if not isinstance(text, typ) or typ is str else text
        except (TypeError, ValueError):
            raise ConfigError(f"{section}.{key}: cannot read {text!r}") from None
    return RunConfig(values).validate()
