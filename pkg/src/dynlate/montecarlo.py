"""Repeated simulate-then-estimate studies with RMSE, bias and coverage.

Replication ``r`` draws its dataset from seed ``(base_seed, r)`` and its
cross-fitting split from a seed derived from the same pair, so results do
not depend on how replications are scheduled across workers.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .errors import ConfigError, DynlateError, EstimabilityError
from .estimators import EstimandSpec, EstimateConfig, estimate
from .learners import LearnerSpec
from .sim import (
    VARIANTS,
    LogisticLinearScm,
    fix_instruments,
    rollout_counterfactual,
    simulate,
    true_late_mc,
    true_mixture_mc,
)

CSV_COLUMNS = ("n", "p", "estimand", "rmse", "bias", "coverage")


@dataclass(frozen=True)
class ExperimentConfig:
    variant: str = "when_to_treat_dgp"
    T: int = 2
    p: int = 10
    n: int = 5000
    replications: int = 100
    estimands: tuple[str, ...] = ("when_to_treat(1)", "when_to_treat(2)")
    learner: LearnerSpec = field(default_factory=LearnerSpec)
    folds: int = 5
    riesz: str = "plugin"
    level: float = 0.95
    base_seed: int = 0
    n_mc: int = 500_000
    truth_seed: int = 20240601
    workers: int = 1
    treatment_effect: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.n_mc < 100_000:
            raise ConfigError("n_mc must be >= 100000 for the truth oracle")
        if self.n < 1:
            raise ConfigError("n must be ≥ 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        object.__setattr__(self, "estimands", tuple(self.estimands))
        for e in self.estimands:
            EstimandSpec.parse(e, self.T)

    @property
    def scm(self) -> LogisticLinearScm:
        return LogisticLinearScm(T=self.T, p=self.p, variant=self.variant, treatment_effect=self.treatment_effect)

    @property
    def specs(self) -> list[EstimandSpec]:
        return [EstimandSpec.parse(e, self.T) for e in self.estimands]

    def estimate_config(self, seed: int) -> EstimateConfig:
        return EstimateConfig(learner=self.learner, folds=self.folds, seed=seed, level=self.level, riesz=self.riesz)


@dataclass(frozen=True)
class Truth:
    value: float
    se: float


def oracle_truth(scm: LogisticLinearScm, spec: EstimandSpec, n_mc: int, seed) -> Truth:
    """Counterfactual Monte Carlo ground truth for an estimand."""
    T = scm.T
    k = spec.kind
    if k == "when_to_treat":
        r = true_late_mc(scm, spec.z, spec.z, n_mc, seed)
        return Truth(r.value, r.se)
    if k == "mixture":
        r = true_mixture_mc(scm, spec.z, n_mc, seed)
        return Truth(r.value, r.se)
    if k.startswith("always_treat"):
        ones = (1,) * T
        r = true_late_mc(scm, ones, ones, n_mc, seed)
        return Truth(r.value, r.se)
    draws = rollout_counterfactual(scm, n_mc, seed, [fix_instruments(spec.z, "arm")])
    arm = draws["arm"]
    if k == "counterfactual_mean":
        v = arm.y
    else:
        v = (arm.d == np.array(spec.d, dtype=np.int8)).all(axis=1).astype(float)
    return Truth(float(v.mean()), float(v.std(ddof=1) / math.sqrt(n_mc)))


@dataclass
class McRow:
    estimand: str
    truth: float
    rmse: float
    bias: float
    coverage: float
    mean_ci_width: float
    mean_se: float
    failures: int
    r_effective: int


@dataclass
class McSummary:
    config: ExperimentConfig
    rows: dict[str, McRow]
    truths: dict[str, Truth]
    seeds: list
    failures: list[dict]
    estimates: dict[str, list] = field(default_factory=dict)

    def csv_text(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for name, row in self.rows.items():
            lines.append(
                ",".join(
                    [str(self.config.n), str(self.config.p), name]
                    + [format(v, ".17g") for v in (row.rmse, row.bias, row.coverage)]
                )
            )
        return "\n".join(lines) + "\n"

    def sidecar(self, timestamp: bool = True) -> dict:
        cfg = asdict(self.config)
        # scheduling is not part of the experiment, so it lives with the metadata
        workers = cfg.pop("workers")
        out = {
            "config": cfg,
            "truths": {k: {"value": t.value, "oracle_se": t.se} for k, t in self.truths.items()},
            "rows": {k: asdict(r) for k, r in self.rows.items()},
            "seeds": self.seeds,
            "failures": self.failures,
        }
        if timestamp:
            out["metadata"] = {
                "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
                "version": __version__,
                "workers": workers,
            }
        return out

    def fingerprint(self) -> str:
        """Everything except the timestamped metadata, serialised canonically."""
        return self.csv_text() + json.dumps(self.sidecar(timestamp=False), sort_keys=True, default=str)

    def write(self, csv_path, json_path=None) -> None:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.csv_text())
        json_path = json_path or str(csv_path).rsplit(".", 1)[0] + ".json"
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(self.sidecar(), fh, indent=2, default=str)


def summarize(estimates, truth: float, name: str = "", failures: int = 0) -> McRow:
    """Aggregate ``(point, lo, hi[, se])`` tuples or reports against ``truth``."""
    pts, los, his, ses = [], [], [], []
    for e in estimates:
        if hasattr(e, "point"):
            pts.append(e.point), los.append(e.ci[0]), his.append(e.ci[1]), ses.append(e.std_error)
        else:
            pts.append(e[0]), los.append(e[1]), his.append(e[2]), ses.append(e[3] if len(e) > 3 else float("nan"))
    if not pts:
        raise ConfigError("summarize needs a nonempty list of estimates")
    pts = np.asarray(pts, dtype=float)
    los, his = np.asarray(los, dtype=float), np.asarray(his, dtype=float)
    err = pts - truth
    mse = float(np.mean(err * err))
    bias = float(abs(pts.mean() - truth))
    var = float(np.mean((pts - pts.mean()) ** 2))
    assert abs(mse - (bias * bias + var)) <= 1e-12 * max(1.0, mse), "rmse^2 != bias^2 + variance"
    return McRow(
        estimand=name,
        truth=float(truth),
        rmse=math.sqrt(mse),
        bias=bias,
        coverage=float(np.mean((los <= truth) & (truth <= his))),
        mean_ci_width=float(np.mean(his - los)),
        mean_se=float(np.nanmean(ses)) if np.any(np.isfinite(ses)) else float("nan"),
        failures=int(failures),
        r_effective=int(pts.size),
    )


def replication_seed(base_seed: int, r: int) -> int:
    return int(np.random.SeedSequence([base_seed, r, 1]).generate_state(1)[0])


def run_replication(config: ExperimentConfig, r: int) -> list[tuple]:
    """One simulate-then-estimate cycle; returns ``(label, point, lo, hi, se, error)`` per estimand."""
    ds = simulate(config.scm, config.n, (config.base_seed, r))
    ecfg = config.estimate_config(replication_seed(config.base_seed, r))
    out = []
    try:
        ns = ecfg.nuisances(ds)
    except DynlateError as exc:
        return [(s.label, None, None, None, None, f"{type(exc).__name__}: {exc}") for s in config.specs]
    for spec in config.specs:
        try:
            rep = estimate(ds, ecfg, spec, ns)
            out.append((spec.label, rep.point, rep.ci[0], rep.ci[1], rep.std_error, None))
        except DynlateError as exc:
            out.append((spec.label, None, None, None, None, f"{type(exc).__name__}: {exc}"))
    return out


def _run_star(args):
    return run_replication(*args)


def run_mc(config: ExperimentConfig, progress=None) -> McSummary:
    """Run all replications and aggregate per estimand."""
    specs = config.specs
    truths = {s.label: oracle_truth(config.scm, s, config.n_mc, config.truth_seed) for s in specs}
    jobs = [(config, r) for r in range(config.replications)]
    if config.workers == 1:
        results = []
        for j in jobs:
            results.append(_run_star(j))
            if progress:
                progress(len(results), len(jobs))
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_star, jobs, chunksize=1))
    per = {s.label: [] for s in specs}
    failures = []
    for r, res in enumerate(results):
        for label, pt, lo, hi, se, err in res:
            if err is None:
                per[label].append((pt, lo, hi, se))
            else:
                failures.append({"replication": r, "estimand": label, "error": err})
    if all(not v for v in per.values()):
        raise EstimabilityError(f"all replications failed; first failure: {failures[0]['error']}")
    rows = {}
    for s in specs:
        nfail = sum(1 for f in failures if f["estimand"] == s.label)
        if per[s.label]:
            rows[s.label] = summarize(per[s.label], truths[s.label].value, s.label, nfail)
        else:
            nan = float("nan")
            rows[s.label] = McRow(s.label, truths[s.label].value, nan, nan, nan, nan, nan, nfail, 0)
    seeds = [[config.base_seed, r] for r in range(config.replications)]
    return McSummary(config, rows, truths, seeds, failures, {k: [e[0] for e in v] for k, v in per.items()})
