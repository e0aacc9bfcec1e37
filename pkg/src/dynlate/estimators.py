"""Debiased moment estimators with standard errors and confidence intervals.

Moments are assembled from arrays of out-of-fold nuisance values::

    phi_z = f_1 + sum_{t<T} a_t (f_{t+1} - f_t) + a_T (Y - f_T)
    psi   = same with the nested treatment regressions and 1{D = d}

and ratio estimands are solved in closed form ``mean(num) / mean(den)`` with
influence function ``(num - tau den) / mean(den)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .data import InterventionVector, PanelDataset, as_bits, staggered_violations, validate_dataset
from .errors import ConfigError, DataValidationError, EstimabilityError
from .learners import LearnerSpec
from .nuisance import RIESZ_MODES, CrossFitPlan, NuisanceSet

KINDS = (
    "when_to_treat",
    "mixture",
    "always_treat_staggered",
    "always_treat_strong",
    "always_treat_general_2p",
    "counterfactual_mean",
    "compliance_prob",
)
NEEDS_ONE_SIDED = {"when_to_treat", "mixture", "always_treat_staggered", "always_treat_strong", "always_treat_general_2p"}


@dataclass(frozen=True)
class EstimateConfig:
    learner: LearnerSpec = field(default_factory=LearnerSpec)
    folds: int = 5
    seed: int = 0
    level: float = 0.95
    riesz: str = "plugin"
    min_denominator: float = 0.01
    weight_flag: float = 100.0

    def __post_init__(self):
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.riesz not in RIESZ_MODES:
            raise ConfigError(f"unknown riesz mode {self.riesz!r}; expected one of {RIESZ_MODES}")

    @property
    def quantile(self) -> float:
        return float(norm.ppf(0.5 + self.level / 2))

    def nuisances(self, ds: PanelDataset, folds=None) -> NuisanceSet:
        plan = CrossFitPlan.make(ds.n, self.folds, self.seed) if folds is None else CrossFitPlan(self.folds, folds, self.seed)
        return NuisanceSet(ds, plan, self.learner, self.riesz)


_SPEC_RE = re.compile(r"^\s*([a-z_0-9]+)\s*(?:\((.*)\))?\s*$")


@dataclass(frozen=True)
class EstimandSpec:
    """Estimand descriptor; ``z``/``d`` are bit tuples where the kind needs them."""

    kind: str
    T: int
    z: tuple[int, ...] | None = None
    d: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown estimand kind {self.kind!r}; expected one of {KINDS}")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        for name in ("z", "d"):
            v = getattr(self, name)
            if v is not None:
                v = as_bits(v)
                if len(v) != self.T:
                    raise ConfigError(f"{name}={v} does not have length T={self.T}")
                object.__setattr__(self, name, v)
        if self.kind == "when_to_treat":
            if self.z is None or InterventionVector(self.z).treated_period is None:
                raise ConfigError("when_to_treat needs a unit vector z")
            object.__setattr__(self, "d", self.z)
        if self.kind in ("mixture", "counterfactual_mean", "compliance_prob") and self.z is None:
            raise ConfigError(f"{self.kind} needs z")
        if self.kind == "compliance_prob" and self.d is None:
            raise ConfigError("compliance_prob needs d")
        if self.kind in ("always_treat_strong", "always_treat_general_2p") and self.T != 2:
            raise ConfigError(f"{self.kind} requires T=2")
        if self.kind == "always_treat_staggered" and self.T < 2:
            raise ConfigError("always_treat_staggered requires T >= 2")

    @classmethod
    def when_to_treat(cls, T: int, t: int) -> "EstimandSpec":
        return cls("when_to_treat", T, InterventionVector.unit(T, t).bits)

    @classmethod
    def parse(cls, text: str, T: int) -> "EstimandSpec":
        """Parse ``kind`` or ``kind(args)``, e.g. ``when_to_treat(2)``, ``mixture(11)``, ``compliance_prob(11,10)``."""
        m = _SPEC_RE.match(text)
        if not m:
            raise ConfigError(f"cannot parse estimand {text!r}")
        kind, args = m.group(1), m.group(2)
        parts = [a.strip() for a in args.split(",")] if args else []
        if kind == "when_to_treat":
            if len(parts) != 1:
                raise ConfigError("when_to_treat takes one argument: the treated period")
            arg = parts[0]
            if len(arg) == T and set(arg) <= {"0", "1"}:
                return cls(kind, T, as_bits(arg))
            if arg.isdigit():
                return cls.when_to_treat(T, int(arg))
            return cls(kind, T, as_bits(arg))
        if kind in ("mixture", "counterfactual_mean"):
            if len(parts) != 1:
                raise ConfigError(f"{kind} takes one argument z")
            return cls(kind, T, as_bits(parts[0]))
        if kind == "compliance_prob":
            if len(parts) != 2:
                raise ConfigError("compliance_prob takes two arguments z, d")
            return cls(kind, T, as_bits(parts[0]), as_bits(parts[1]))
        if parts:
            raise ConfigError(f"{kind} takes no arguments")
        return cls(kind, T)

    @property
    def label(self) -> str:
        bits = lambda v: "".join(map(str, v))
        if self.kind == "when_to_treat":
            return f"when_to_treat({bits(self.z)})"
        if self.kind in ("mixture", "counterfactual_mean"):
            return f"{self.kind}({bits(self.z)})"
        if self.kind == "compliance_prob":
            return f"compliance_prob({bits(self.z)},{bits(self.d)})"
        return self.kind


@dataclass
class EstimateReport:
    """Point estimate and inference for one estimand.

    ``std_error = sigma / sqrt(n_eff)`` and ``ci = point -+ q * std_error``,
    where ``sigma`` is the root mean square of the influence function and
    ``n_eff`` the effective sample size (``n`` for unweighted data).
    """

    estimand: str
    point: float
    std_error: float
    ci: tuple[float, float]
    n: int
    denom: float
    sigma: float = float("nan")
    level: float = 0.95
    fold_means: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    influence: np.ndarray | None = field(default=None, repr=False)

    def covers(self, value: float) -> bool:
        return bool(self.ci[0] <= value <= self.ci[1])

    def to_dict(self) -> dict:
        return {
            "estimand": self.estimand,
            "point": self.point,
            "se": self.std_error,
            "ci": list(self.ci),
            "n": self.n,
            "denom": self.denom,
            "flags": list(self.flags),
        }


# ---------------------------------------------------------------------------
# moments from nuisance values


def moment_from_values(first: list[np.ndarray], riesz: list[np.ndarray], terminal: np.ndarray) -> np.ndarray:
    """``h_1 + sum_{t<T} a_t (h_{t+1} - h_t) + a_T (V - h_T)`` for nested values ``h``."""
    T = len(first)
    out = np.array(first[0], dtype=float)
    for t in range(T - 1):
        out = out + riesz[t] * (first[t + 1] - first[t])
    return out + riesz[T - 1] * (terminal - first[T - 1])


def event_indicator(d: np.ndarray, event) -> np.ndarray:
    if event == "nonzero":
        return d.any(axis=1).astype(float)
    return (d == np.array(as_bits(event), dtype=np.int8)).all(axis=1).astype(float)


def moment_phi(ns: NuisanceSet, z) -> np.ndarray:
    """Per-row ``phi_z`` with out-of-fold nuisances."""
    return moment_from_values(ns.outcome(z), ns.riesz(z), ns.ds.y)


def moment_psi(ns: NuisanceSet, z, event) -> np.ndarray:
    """Per-row ``psi`` for ``Pr(D(z) = d)`` (or ``Pr(D(z) != 0)`` with ``event="nonzero"``)."""
    return moment_from_values(ns.treatment(z, event), ns.riesz(z), event_indicator(ns.ds.d, event))


def moment_rho(ns: NuisanceSet) -> np.ndarray:
    """Per-row staggered numerator moment ``rho``."""
    sv = ns.staggered()
    first = [sv.q] + list(sv.f)
    return moment_from_values(first, sv.gamma, ns.ds.y)


def moment_pi(ns: NuisanceSet) -> np.ndarray:
    sv = ns.staggered()
    return sv.p + sv.a1 * (ns.ds.d[:, 0] - sv.p)


# ---------------------------------------------------------------------------
# report construction


def _wmean(x, w):
    return float(np.dot(w, x) / w.sum())


def _n_eff(w):
    return float(w.sum() ** 2 / np.dot(w, w))


def _fold_means(ns, **cols):
    out = {}
    for k in range(ns.plan.K):
        idx = ns.plan.eval_index(k)
        w = ns.weights[idx]
        out[k] = {name: _wmean(v[idx], w) for name, v in cols.items()}
    return out


def _weight_flags(ns, arrays, cfg) -> list[str]:
    big = max((float(np.max(np.abs(a))) for a in arrays), default=0.0)
    return [f"large_weight(max |a|={big:.3g})"] if big > cfg.weight_flag else []


def _finish(label, point, infl, denom, ns, cfg, flags, fold_means) -> EstimateReport:
    w = ns.weights
    sigma = math.sqrt(max(_wmean(infl * infl, w), 0.0))
    se = sigma / math.sqrt(_n_eff(w))
    q = cfg.quantile
    return EstimateReport(
        label, float(point), se, (point - q * se, point + q * se), ns.ds.n, float(denom), sigma, cfg.level,
        fold_means, flags, infl,
    )


def ratio_report(label, num, den, ns, cfg, flags=()) -> EstimateReport:
    w = ns.weights
    dbar = _wmean(den, w)
    if dbar <= cfg.min_denominator:
        raise EstimabilityError(f"complier mass too small for {label}: mean denominator {dbar:.4g} <= {cfg.min_denominator}")
    tau = _wmean(num, w) / dbar
    infl = (num - tau * den) / dbar
    return _finish(label, tau, infl, dbar, ns, cfg, list(flags), _fold_means(ns, num=num, den=den))


def mean_report(label, values, ns, cfg, flags=()) -> EstimateReport:
    w = ns.weights
    m = _wmean(values, w)
    return _finish(label, m, values - m, 1.0, ns, cfg, list(flags), _fold_means(ns, value=values))


# ---------------------------------------------------------------------------
# estimators


def _prepare(ds, cfg, ns, kind):
    cfg = cfg or EstimateConfig()
    if kind in NEEDS_ONE_SIDED:
        rep = validate_dataset(ds, require_one_sided=True)
        if rep.counts.get("one_sided", 0):
            raise DataValidationError(
                f"one-sided noncompliance violated: {rep.counts['one_sided']} row(s), first at row {rep.first('one_sided')}"
            )
    return cfg, ns or cfg.nuisances(ds)


def estimate_counterfactual_mean(ds, config=None, z=None, ns=None) -> EstimateReport:
    """``E[Y(D(z))]`` as the mean of ``phi_z``."""
    cfg, ns = _prepare(ds, config, ns, "counterfactual_mean")
    z = as_bits(z)
    return mean_report(f"counterfactual_mean({''.join(map(str, z))})", moment_phi(ns, z), ns, cfg,
                       _weight_flags(ns, ns.riesz(z), cfg))


def estimate_compliance_prob(ds, config=None, z=None, d=None, ns=None) -> EstimateReport:
    """``Pr(D(z) = d)`` as the mean of ``psi``."""
    cfg, ns = _prepare(ds, config, ns, "compliance_prob")
    z, d = as_bits(z), as_bits(d)
    label = f"compliance_prob({''.join(map(str, z))},{''.join(map(str, d))})"
    return mean_report(label, moment_psi(ns, z, d), ns, cfg, _weight_flags(ns, ns.riesz(z), cfg))


def estimate_when_to_treat(ds, config=None, t_star: int = 1, ns=None) -> EstimateReport:
    """``tau_d`` for ``d`` treating only in period ``t_star``."""
    cfg, ns = _prepare(ds, config, ns, "when_to_treat")
    if not 1 <= t_star <= ds.T:
        raise ConfigError(f"t_star={t_star} out of range 1..{ds.T}")
    z = InterventionVector.unit(ds.T, t_star).bits
    zero = (0,) * ds.T
    num = moment_phi(ns, z) - moment_phi(ns, zero)
    den = moment_psi(ns, z, z)
    flags = _weight_flags(ns, ns.riesz(z) + ns.riesz(zero), cfg)
    return ratio_report(f"when_to_treat({''.join(map(str, z))})", num, den, ns, cfg, flags)


def estimate_mixture_beta(ds, config=None, z=None, ns=None) -> EstimateReport:
    """``beta_z`` with denominator ``Pr(D(z) != 0)``."""
    cfg, ns = _prepare(ds, config, ns, "mixture")
    z = as_bits(z)
    zero = (0,) * ds.T
    if z == zero:
        raise ConfigError("mixture is undefined for z = 0")
    num = moment_phi(ns, z) - moment_phi(ns, zero)
    den = moment_psi(ns, z, "nonzero")
    flags = _weight_flags(ns, ns.riesz(z) + ns.riesz(zero), cfg)
    return ratio_report(f"mixture({''.join(map(str, z))})", num, den, ns, cfg, flags)


def estimate_always_treat_staggered(ds, config=None, ns=None) -> EstimateReport:
    """``tau_1 = mean(rho - phi_0) / mean(pi)`` under staggered compliance."""
    cfg, ns = _prepare(ds, config, ns, "always_treat_staggered")
    if ds.T < 2:
        raise ConfigError("always_treat_staggered requires T >= 2")
    bad = staggered_violations(ds)
    if bad.size:
        raise EstimabilityError(f"staggered compliance violated: {bad.size} row(s), first at row {int(bad[0])}")
    zero = (0,) * ds.T
    num = moment_rho(ns) - moment_phi(ns, zero)
    den = moment_pi(ns)
    sv = ns.staggered()
    flags = _weight_flags(ns, list(sv.gamma) + ns.riesz(zero), cfg)
    return ratio_report("always_treat_staggered", num, den, ns, cfg, flags)


def estimate_always_treat_strong(ds, config=None, ns=None) -> EstimateReport:
    """Plug-in always-treat LATE under effect homogeneity across complier groups.

    ``tau_11 = (beta_11 - tau_10 w_10 - tau_01 w_01) / w_11`` with
    ``w_d = gamma_d / sum(gamma)`` and ``gamma_d`` the debiased estimate of
    ``Pr(D(1,1) = d)``.  Inference by the delta method on per-row influence
    functions.
    """
    cfg, ns = _prepare(ds, config, ns, "always_treat_strong")
    if ds.T != 2:
        raise ConfigError("always_treat_strong requires T=2")
    ones = (1, 1)
    beta = estimate_mixture_beta(ds, cfg, ones, ns)
    t10 = estimate_when_to_treat(ds, cfg, 1, ns)
    t01 = estimate_when_to_treat(ds, cfg, 2, ns)
    w = ns.weights
    psis = {d: moment_psi(ns, ones, d) for d in ((1, 1), (1, 0), (0, 1))}
    gam = {d: _wmean(v, w) for d, v in psis.items()}
    total = sum(gam.values())
    w11 = gam[(1, 1)] / total if total > 0 else 0.0
    if w11 <= cfg.min_denominator:
        raise EstimabilityError(f"complier mass too small for always_treat_strong: w_11 = {w11:.4g} <= {cfg.min_denominator}")
    g11, g10, g01 = gam[(1, 1)], gam[(1, 0)], gam[(0, 1)]
    b, a10, a01 = beta.point, t10.point, t01.point
    tau = (b * total - a10 * g10 - a01 * g01) / g11
    infl = (
        total / g11 * beta.influence
        - g10 / g11 * t10.influence
        - g01 / g11 * t01.influence
        + (b - a10) / g11 * (psis[(1, 0)] - g10)
        + (b - a01) / g11 * (psis[(0, 1)] - g01)
        + (b - tau) / g11 * (psis[(1, 1)] - g11)
    )
    flags = sorted(set(beta.flags + t10.flags + t01.flags))
    fm = {"beta": beta.point, "tau_10": a10, "tau_01": a01, "gamma": {"".join(map(str, d)): v for d, v in gam.items()}}
    return _finish("always_treat_strong", tau, infl, w11, ns, cfg, flags, fm)


def estimate_always_treat_general_2p(ds, config=None, ns=None) -> EstimateReport:
    """Plug-in always-treat LATE under cross-period effect-compliance independence (point only).

    ``tau_11 = mean(Gamma - tau_10(S_0) G_10) / mean(G_11)`` with
    ``Gamma = q - f_1^0``, ``tau_10(S_0)`` the conditional when-to-treat ratio
    and ``G_d = E[Pr(D = d | H_2, Z_2 = 1) | S_0, Z_1 = 1]``.
    """
    cfg, ns = _prepare(ds, config, ns, "always_treat_general_2p")
    if ds.T != 2:
        raise ConfigError("always_treat_general_2p requires T=2")
    w = ns.weights
    sv = ns.staggered()
    f0 = ns.outcome((0, 0))[0]
    f10 = ns.outcome((1, 0))[0]
    g10_own = ns.treatment((1, 0), (1, 0))[0]
    tau10 = (f10 - f0) / np.maximum(g10_own, cfg.min_denominator)
    G10 = ns.treatment((1, 1), (1, 0))[0]
    G11 = ns.treatment((1, 1), (1, 1))[0]
    den = _wmean(G11, w)
    if den <= cfg.min_denominator:
        raise EstimabilityError(f"complier mass too small for always_treat_general_2p: {den:.4g} <= {cfg.min_denominator}")
    point = _wmean(sv.q - f0 - tau10 * G10, w) / den
    nan = float("nan")
    return EstimateReport(
        "always_treat_general_2p", float(point), nan, (nan, nan), ds.n, den, nan, cfg.level,
        _fold_means(ns, num=sv.q - f0 - tau10 * G10, den=G11), ["point_only"], None,
    )


def conditional_late(ns: NuisanceSet, s0, spec: EstimandSpec, min_denominator: float = 0.01) -> float:
    """Heterogeneous LATE at initial state ``s0`` from first-level nuisance predictions (fold-averaged)."""
    s0 = np.atleast_2d(np.asarray(s0, dtype=float))
    T = ns.T
    zero = (0,) * T
    if spec.kind in ("when_to_treat", "mixture"):
        z = spec.z
        event = z if spec.kind == "when_to_treat" else "nonzero"
        num = ns.predict_avg(("f", z), s0) - ns.predict_avg(("f", zero), s0)
        den = ns.predict_avg(("g", event, z), s0)
    elif spec.kind == "always_treat_staggered":
        num = ns.predict_avg(("q",), s0) - ns.predict_avg(("f", zero), s0)
        den = ns.predict_avg(("p",), s0)
    else:
        raise ConfigError(f"conditional_late does not support {spec.kind}")
    if np.any(den < min_denominator):
        raise EstimabilityError(f"predicted compliance {float(np.min(den)):.4g} below {min_denominator} at s0")
    out = num / den
    return float(out[0]) if out.size == 1 else out


def conditional_compliance(ns: NuisanceSet, s0, spec: EstimandSpec):
    s0 = np.atleast_2d(np.asarray(s0, dtype=float))
    if spec.kind == "when_to_treat":
        return ns.predict_avg(("g", spec.z, spec.z), s0)
    if spec.kind == "mixture":
        return ns.predict_avg(("g", "nonzero", spec.z), s0)
    if spec.kind == "always_treat_staggered":
        return ns.predict_avg(("p",), s0)
    raise ConfigError(f"conditional_compliance does not support {spec.kind}")


# ---------------------------------------------------------------------------
# dispatch


def estimate(ds: PanelDataset, config: EstimateConfig | None, spec: EstimandSpec, ns: NuisanceSet | None = None) -> EstimateReport:
    if spec.T != ds.T:
        raise ConfigError(f"estimand is for T={spec.T} but data has T={ds.T}")
    k = spec.kind
    if k == "when_to_treat":
        return estimate_when_to_treat(ds, config, InterventionVector(spec.z).treated_period, ns)
    if k == "mixture":
        return estimate_mixture_beta(ds, config, spec.z, ns)
    if k == "always_treat_staggered":
        return estimate_always_treat_staggered(ds, config, ns)
    if k == "always_treat_strong":
        return estimate_always_treat_strong(ds, config, ns)
    if k == "always_treat_general_2p":
        return estimate_always_treat_general_2p(ds, config, ns)
    if k == "counterfactual_mean":
        return estimate_counterfactual_mean(ds, config, spec.z, ns)
    return estimate_compliance_prob(ds, config, spec.z, spec.d, ns)


def estimate_all(ds, config, specs, folds=None) -> list[EstimateReport]:
    """Estimate several estimands on one shared set of cross-fitted nuisances."""
    config = config or EstimateConfig()
    ns = config.nuisances(ds, folds)
    return [estimate(ds, config, s, ns) for s in specs]
