"""Self-contained exact identification checks on finite discrete SCMs."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .discrete import (
    DiscreteScm,
    all_vectors,
    check_cond_indep,
    exact_counterfactuals,
    exact_late,
    exact_mixture,
    exact_observed_law,
    g_formula_exact,
    identified_always_treat_strong,
    identified_late,
    is_one_sided,
    is_sequential_monotone,
    joint_counterfactual_law,
    laws_equal,
    random_discrete_scm,
    table_dgp,
)
from .estimators import EstimandSpec


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def random_one_sided_family(count: int, seed: int = 0, T: int = 2) -> list[DiscreteScm]:
    """One-sided SCMs with uniform instruments and compliers for every when-to-treat vector."""
    rng = np.random.default_rng(seed)
    units = [tuple(int(s == t) for s in range(T)) for t in range(T)]
    return [random_discrete_scm(rng, T=T, one_sided=True, require_compliers=units) for _ in range(count)]


def identification_gaps(scm: DiscreteScm) -> dict[str, float]:
    """Worst absolute gaps between direct enumeration and the identified formulas."""
    T = scm.T
    law = exact_observed_law(scm)
    zero = (0,) * T
    late_gap = 0.0
    for t in range(T):
        d = tuple(int(s == t) for s in range(T))
        late_gap = max(late_gap, abs(float(exact_late(scm, d, d) - identified_late(law, d, d))))
    mix_gap = 0.0
    mix_id_gap = 0.0
    for z in all_vectors(T):
        if z == zero:
            continue
        m = exact_mixture(scm, z)
        combo = sum(m.thetas[d] * w for d, w in m.weights.items() if w != 0)
        mix_gap = max(mix_gap, abs(float(m.beta - combo)))
        mix_id_gap = max(mix_id_gap, abs(float(m.beta - identified_late(law, z, None))))
    gform_gap = 0.0
    for z in all_vectors(T):
        mean, probs = exact_counterfactuals(scm, z)
        gform_gap = max(gform_gap, abs(float(mean - g_formula_exact(law, z))))
        for d, p in probs.items():
            gform_gap = max(gform_gap, abs(float(p - g_formula_exact(law, z, d))))
    return {"late": late_gap, "mixture": mix_gap, "mixture_identified": mix_id_gap, "g_formula": gform_gap}


def exact_estimand(scm: DiscreteScm, spec: EstimandSpec, s0=None) -> float:
    """Exact value each estimator targets on a discrete SCM.

    Identified quantities come from the observed law; the staggered and
    general always-treat targets are the always-treat LATE itself, which they
    recover when their compliance restriction holds.
    """
    law = exact_observed_law(scm)
    k = spec.kind
    if k == "when_to_treat":
        v = identified_late(law, spec.z, spec.z, s0)
    elif k == "mixture":
        v = identified_late(law, spec.z, None, s0)
    elif k == "counterfactual_mean":
        v = g_formula_exact(law, spec.z, "outcome", s0)
    elif k == "compliance_prob":
        v = g_formula_exact(law, spec.z, spec.d, s0)
    elif k == "always_treat_strong":
        v = identified_always_treat_strong(law, s0)
    else:
        ones = (1,) * scm.T
        v = exact_late(scm, ones, ones, s0)
    return float(v)


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t0)


def run_verify_suite(
    n_random: int = 200, seed: int = 0, tol: float = 1e-10, tables: Mapping[str, DiscreteScm] | None = None
) -> list[CheckResult]:
    """Run every identity; ``tables`` overrides the tabulated DGPs (mutation testing)."""
    tabs = {k: table_dgp(k) for k in ("T1_A", "T1_B", "T2_A", "T2_B")}
    tabs.update(tables or {})
    results = []
    family: list[DiscreteScm] = []

    def random_identities():
        family.extend(random_one_sided_family(n_random, seed))
        worst = {"late": 0.0, "mixture": 0.0, "mixture_identified": 0.0, "g_formula": 0.0}
        for scm in family:
            for k, v in identification_gaps(scm).items():
                worst[k] = max(worst[k], v)
        ok = all(v <= tol for v in worst.values())
        return ok, f"{n_random} random one-sided SCMs, max gaps " + ", ".join(f"{k}={v:.2e}" for k, v in worst.items())

    results.append(_timed("identification and mixture identities", random_identities))

    def witness(a, b, z, expected):
        def run():
            same = laws_equal(exact_observed_law(tabs[a]), exact_observed_law(tabs[b]), 1e-12)
            va, vb = exact_late(tabs[a], z, z), exact_late(tabs[b], z, z)
            ok = same and va == expected[0] and vb == expected[1]
            return ok, f"laws_equal={same}, LATE{z}: {a}={float(va):g}, {b}={float(vb):g}"

        return run

    results.append(_timed("nonidentifiability witness (monotonicity)", witness("T1_A", "T1_B", (1, 0), (4, 0))))
    results.append(_timed("nonidentifiability witness (one-sided)", witness("T2_A", "T2_B", (1, 1), (4, 0))))

    def assumption_flags():
        mono = all(is_sequential_monotone(t.dz, 2) for k in ("T1_A", "T1_B") for t in tabs[k].types)
        one = all(is_one_sided(t.dz) for k in ("T2_A", "T2_B") for t in tabs[k].types)
        return mono and one, f"T1 sequentially monotone={mono}, T2 one-sided={one}"

    results.append(_timed("compliance assumption flags", assumption_flags))

    def table_g_formula():
        gap = 0.0
        for k in ("T2_A", "T2_B"):
            law = exact_observed_law(tabs[k])
            for z in all_vectors(2):
                gap = max(gap, abs(float(exact_counterfactuals(tabs[k], z)[0] - g_formula_exact(law, z))))
        same = all(
            g_formula_exact(tabs["T1_A"], z) == g_formula_exact(tabs["T1_B"], z) for z in all_vectors(2)
        )
        return gap <= 1e-12 and same, f"T2 g-formula gap={gap:.2e}, T1 pair g-formula equal={same}"

    results.append(_timed("g-formula on tabulated DGPs", table_g_formula))

    def independence():
        worst_tab = max(check_cond_indep(joint_counterfactual_law(tabs[k]), "Z", "type") for k in tabs)
        worst_seq = 0.0
        for scm in family[:20]:
            joint = joint_counterfactual_law(scm)
            cf = [n for n in joint.names if n.startswith("Y(") or n.startswith("D(")]
            worst_seq = max(worst_seq, check_cond_indep(joint, "Z1", cf, ("S0",)))
            worst_seq = max(worst_seq, check_cond_indep(joint, "Z2", cf, ("S0", "Z1", "D1")))
        ok = worst_tab < 1e-12 and worst_seq < 1e-10
        return ok, f"Z vs type on tables={worst_tab:.2e}, sequential ignorability on random SCMs={worst_seq:.2e}"

    results.append(_timed("instrument ignorability", independence))
    return results
