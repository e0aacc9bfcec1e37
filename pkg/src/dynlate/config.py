"""JSON configuration files for the command-line front end.

Schema (version 1); every section is optional and unknown keys are errors::

    {
      "schema_version": 1,
      "simulate": {"variant", "T", "p", "n", "seed", "treatment_effect", "out"},
      "estimate": {"data", "estimands", "folds", "seed", "level", "riesz",
                   "learner"},
      "mc":       {"variant", "T", "p", "n", "replications", "estimands",
                   "folds", "riesz", "level", "base_seed", "n_mc", "truth_seed",
                   "workers", "treatment_effect", "learner", "out"},
      "learner":  {"regressor", "classifier", "n_lambdas", "lambda_min_ratio",
                   "logistic_grid", "cv_folds", "early_stopping_rounds",
                   "max_boosting_rounds", "clip"}
    }

A top-level ``learner`` section is the default for ``estimate`` and ``mc``.
Defaults: 5 cross-fitting folds, propensity clip [0.01, 1], level 0.95.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .estimators import EstimandSpec, EstimateConfig
from .learners import LearnerSpec
from .montecarlo import ExperimentConfig
from .sim import LogisticLinearScm

SCHEMA_VERSION = 1

LEARNER_KEYS = {
    "regressor", "classifier", "n_lambdas", "lambda_min_ratio", "logistic_grid", "cv_folds",
    "early_stopping_rounds", "max_boosting_rounds", "clip",
}
SIMULATE_KEYS = {"variant", "T", "p", "n", "seed", "treatment_effect", "out"}
ESTIMATE_KEYS = {"data", "estimands", "folds", "seed", "level", "riesz", "learner", "T"}
MC_KEYS = {
    "variant", "T", "p", "n", "replications", "estimands", "folds", "riesz", "level", "base_seed",
    "n_mc", "truth_seed", "workers", "treatment_effect", "learner", "out",
}
TOP_KEYS = {"schema_version", "simulate", "estimate", "mc", "learner"}


class ConfigKeyError(ConfigError):
    def __init__(self, source: str, key: str, message: str):
        self.source, self.key = source, key
        super().__init__(f"{source}: {key}: {message}")


def _check_keys(section: dict, allowed: set, source: str, prefix: str):
    if not isinstance(section, dict):
        raise ConfigKeyError(source, prefix, "expected an object")
    for k in section:
        if k not in allowed:
            raise ConfigKeyError(source, f"{prefix}.{k}" if prefix else k, f"unknown key; allowed: {sorted(allowed)}")


def _learner(section: dict | None, source: str, prefix: str) -> LearnerSpec:
    if section is None:
        return LearnerSpec()
    _check_keys(section, LEARNER_KEYS, source, prefix)
    kw = dict(section)
    if "clip" in kw:
        kw["clip"] = tuple(kw["clip"])
    if "logistic_grid" in kw:
        kw["logistic_grid"] = tuple(kw["logistic_grid"])
    try:
        return LearnerSpec(**kw)
    except (ConfigError, TypeError) as exc:
        raise ConfigKeyError(source, prefix, str(exc)) from None


@dataclass
class CliConfig:
    source: str = "<defaults>"
    simulate: dict = field(default_factory=dict)
    estimate: dict = field(default_factory=dict)
    mc: dict = field(default_factory=dict)
    learner: dict | None = None

    @classmethod
    def load(cls, path) -> "CliConfig":
        source = str(path)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{source}: cannot read config: {exc.strerror}") from None
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: invalid JSON: {exc}") from None
        return cls.from_dict(obj, source)

    @classmethod
    def from_dict(cls, obj: dict, source: str = "<dict>") -> "CliConfig":
        _check_keys(obj, TOP_KEYS, source, "")
        version = obj.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigKeyError(source, "schema_version", f"unsupported version {version!r}; expected {SCHEMA_VERSION}")
        cfg = cls(source, obj.get("simulate", {}), obj.get("estimate", {}), obj.get("mc", {}), obj.get("learner"))
        _check_keys(cfg.simulate, SIMULATE_KEYS, source, "simulate")
        _check_keys(cfg.estimate, ESTIMATE_KEYS, source, "estimate")
        _check_keys(cfg.mc, MC_KEYS, source, "mc")
        if cfg.learner is not None:
            _learner(cfg.learner, source, "learner")
        return cfg

    # ------------------------------------------------------------ sections

    def scm(self, overrides: dict | None = None) -> tuple[LogisticLinearScm, int, int]:
        s = {**self.simulate, **{k: v for k, v in (overrides or {}).items() if v is not None}}
        n = int(s.get("n", 1000))
        if n < 1:
            raise ConfigError("n must be ≥ 1")
        try:
            scm = LogisticLinearScm(
                T=int(s.get("T", 2)),
                p=int(s.get("p", 10)),
                variant=s.get("variant", "when_to_treat_dgp"),
                treatment_effect=float(s.get("treatment_effect", 1.0)),
            )
        except ConfigError as exc:
            raise ConfigKeyError(self.source, "simulate", str(exc)) from None
        return scm, n, int(s.get("seed", 0))

    def estimate_config(self, seed=None) -> EstimateConfig:
        e = self.estimate
        learner = _learner(e.get("learner", self.learner), self.source, "estimate.learner")
        try:
            return EstimateConfig(
                learner=learner,
                folds=int(e.get("folds", 5)),
                seed=int(e.get("seed", 0) if seed is None else seed),
                level=float(e.get("level", 0.95)),
                riesz=e.get("riesz", "plugin"),
            )
        except ConfigError as exc:
            raise ConfigKeyError(self.source, "estimate", str(exc)) from None

    def estimands(self, T: int) -> list[EstimandSpec]:
        names = self.estimate.get("estimands", ["when_to_treat(1)"])
        if isinstance(names, str):
            names = [names]
        out = []
        for i, name in enumerate(names):
            try:
                out.append(EstimandSpec.parse(str(name), T))
            except ConfigError as exc:
                raise ConfigKeyError(self.source, f"estimate.estimands[{i}]", str(exc)) from None
        return out

    def experiment(self, seed=None, n=None) -> ExperimentConfig:
        m = dict(self.mc)
        m.pop("out", None)
        learner = _learner(m.pop("learner", self.learner), self.source, "mc.learner")
        if seed is not None:
            m["base_seed"] = seed
        if n is not None:
            m["n"] = n
        T = int(m.get("T", 2))
        for i, name in enumerate(m.get("estimands", ())):
            try:
                EstimandSpec.parse(str(name), T)
            except ConfigError as exc:
                raise ConfigKeyError(self.source, f"mc.estimands[{i}]", str(exc)) from None
        if "estimands" in m:
            m["estimands"] = tuple(str(x) for x in m["estimands"])
        try:
            return ExperimentConfig(learner=learner, **m)
        except (ConfigError, TypeError) as exc:
            raise ConfigKeyError(self.source, "mc", str(exc)) from None
