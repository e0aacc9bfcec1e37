"""Finite discrete SCMs with exact counterfactual and observed-law enumeration.

A :class:`DiscreteScm` is a finite mixture of latent types.  Each type fixes
an initial state label ``s0``, a compliance map ``z -> D(z)`` and a
potential-outcome map ``d -> Y(d)``.  Instruments are drawn from a law
independent of the type, and every later state is constant, so the history
``H_t`` reduces to ``(s0, z_<t, d_<t)``.

Table-built models hold :class:`fractions.Fraction` probabilities so their
identities hold exactly; random models use floats.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from fractions import Fraction
from numbers import Number
from typing import Mapping, Sequence

import numpy as np

from .data import PanelDataset, as_bits
from .errors import ConfigError, EstimabilityError, OverlapError

Bits = tuple[int, ...]


def all_vectors(T: int) -> list[Bits]:
    return [tuple(v) for v in itertools.product((0, 1), repeat=T)]


def _leq(a: Bits, b: Bits) -> bool:
    return all(x <= y for x, y in zip(a, b))


def _sub(a: Bits, b: Bits) -> Bits:
    return tuple(x - y for x, y in zip(a, b))


@dataclass(frozen=True)
class LatentType:
    prob: Number
    dz: Mapping[Bits, Bits]
    yd: Mapping[Bits, Number]
    s0: float = 0.0
    name: str = ""


@dataclass(frozen=True)
class DiscreteScm:
    T: int
    types: tuple[LatentType, ...]
    instrument_law: Mapping[Bits, Number]
    one_sided: bool = False
    sequential_monotone: bool = False

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))
        vecs = all_vectors(self.T)
        total = sum(t.prob for t in self.types)
        if abs(float(total) - 1.0) > 1e-12:
            raise ConfigError(f"type probabilities sum to {float(total)!r}, not 1")
        if abs(float(sum(self.instrument_law.values())) - 1.0) > 1e-12:
            raise ConfigError("instrument law does not sum to 1")
        if any(p < 0 for p in self.instrument_law.values()) or any(t.prob < 0 for t in self.types):
            raise ConfigError("negative probability")
        for k, typ in enumerate(self.types):
            if set(typ.dz) != set(vecs) or set(typ.yd) != set(vecs):
                raise ConfigError(f"type {k}: compliance and outcome maps must cover {{0,1}}^{self.T}")
            if not is_causal(typ.dz, self.T):
                raise ConfigError(f"type {k}: D_t depends on future encouragements")
            if self.one_sided and not is_one_sided(typ.dz):
                raise ConfigError(f"type {k}: compliance map violates one-sided noncompliance")
            if self.sequential_monotone and not is_sequential_monotone(typ.dz, self.T):
                raise ConfigError(f"type {k}: compliance map violates sequential monotonicity")

    @property
    def s0_values(self) -> list[float]:
        return sorted({t.s0 for t in self.types})


def is_causal(dz: Mapping[Bits, Bits], T: int) -> bool:
    """``D_t(z)`` depends on ``z`` only through ``z_<=t``."""
    for z, zp in itertools.product(all_vectors(T), repeat=2):
        for t in range(T):
            if z[: t + 1] == zp[: t + 1] and dz[z][t] != dz[zp][t]:
                return False
    return True


def is_one_sided(dz: Mapping[Bits, Bits]) -> bool:
    return all(_leq(d, z) for z, d in dz.items())


def is_sequential_monotone(dz: Mapping[Bits, Bits], T: int) -> bool:
    """Raising ``z_t`` alone never lowers ``D_t``."""
    for z in all_vectors(T):
        for t in range(T):
            if z[t] == 0:
                up = z[:t] + (1,) + z[t + 1 :]
                if dz[up][t] < dz[z][t]:
                    return False
    return True


def is_staggered(dz: Mapping[Bits, Bits]) -> bool:
    """A first-period complier complies with every later encouragement."""
    for z, d in dz.items():
        if z[0] == 1 and d[0] == 1 and any(dt != zt for dt, zt in zip(d[1:], z[1:])):
            return False
    return True


# ---------------------------------------------------------------------------
# observed law


@dataclass(frozen=True)
class ObservedLaw:
    """Exact probabilities of observed cells ``(s0, z, d, y)``."""

    T: int
    cells: Mapping[tuple, Number]

    def total(self):
        return sum(self.cells.values())

    def prob(self, pred) -> Number:
        return sum(p for key, p in self.cells.items() if pred(*key))

    def support(self) -> set:
        return {k for k, p in self.cells.items() if p != 0}


def exact_observed_law(scm: DiscreteScm) -> ObservedLaw:
    cells: dict[tuple, Number] = {}
    for typ in scm.types:
        for z, pz in scm.instrument_law.items():
            mass = typ.prob * pz
            if mass == 0:
                continue
            d = typ.dz[z]
            key = (typ.s0, z, d, typ.yd[d])
            cells[key] = cells.get(key, 0) + mass
    return ObservedLaw(scm.T, cells)


def laws_equal(a: ObservedLaw, b: ObservedLaw, tol: float = 1e-12) -> bool:
    """Max absolute cell difference over the union of supports is at most ``tol``."""
    keys = set(a.cells) | set(b.cells)
    return all(abs(float(a.cells.get(k, 0)) - float(b.cells.get(k, 0))) <= tol for k in keys)


def _types_in(scm: DiscreteScm, s0):
    if s0 is None:
        return list(scm.types), sum(t.prob for t in scm.types)
    sel = [t for t in scm.types if t.s0 == s0]
    return sel, sum(t.prob for t in sel)


def exact_counterfactuals(scm: DiscreteScm, z, s0=None):
    """``(E[Y(D(z))], {d: Pr(D(z)=d)})``, optionally within the stratum ``S_0 = s0``."""
    z = as_bits(z)
    sel, mass = _types_in(scm, s0)
    if mass == 0:
        raise EstimabilityError(f"no mass at s0={s0!r}")
    mean = sum(t.prob * t.yd[t.dz[z]] for t in sel) / mass
    probs = {d: 0 for d in all_vectors(scm.T)}
    for t in sel:
        probs[t.dz[z]] += t.prob
    return mean, {d: p / mass for d, p in probs.items()}


def exact_late(scm: DiscreteScm, z, d, s0=None):
    """``E[Y(d) - Y(0) | D(z) - D(0) = d]``; equals the ``D(z) = d`` version under one-sided compliance."""
    z, d = as_bits(z), as_bits(d)
    zero = (0,) * scm.T
    sel, _ = _types_in(scm, s0)
    grp = [t for t in sel if _sub(t.dz[z], t.dz[zero]) == d]
    mass = sum(t.prob for t in grp)
    if mass == 0:
        raise EstimabilityError(f"undefined LATE: no compliers with D{z}-D(0)={d}")
    return sum(t.prob * (t.yd[d] - t.yd[zero]) for t in grp) / mass


def exact_theta(scm: DiscreteScm, z, d, s0=None):
    """``E[Y(d) - Y(0) | D(z) = d]``."""
    z, d = as_bits(z), as_bits(d)
    zero = (0,) * scm.T
    sel, _ = _types_in(scm, s0)
    grp = [t for t in sel if t.dz[z] == d]
    mass = sum(t.prob for t in grp)
    if mass == 0:
        raise EstimabilityError(f"undefined LATE: no units with D{z}={d}")
    return sum(t.prob * (t.yd[d] - t.yd[zero]) for t in grp) / mass


@dataclass(frozen=True)
class MixtureTruth:
    beta: Number
    weights: dict
    thetas: dict


def exact_mixture(scm: DiscreteScm, z, s0=None) -> MixtureTruth:
    """``beta_z = E[Y(D(z)) - Y(0) | D(z) != 0]`` with its weights ``w(z, d)`` and components ``theta(z, d)``."""
    z = as_bits(z)
    zero = (0,) * scm.T
    sel, _ = _types_in(scm, s0)
    grp = [t for t in sel if t.dz[z] != zero]
    mass = sum(t.prob for t in grp)
    if mass == 0:
        raise EstimabilityError(f"undefined LATE: no compliers under z={z}")
    beta = sum(t.prob * (t.yd[t.dz[z]] - t.yd[zero]) for t in grp) / mass
    weights, thetas = {}, {}
    for d in all_vectors(scm.T):
        if d == zero or not _leq(d, z):
            continue
        w = sum(t.prob for t in grp if t.dz[z] == d) / mass
        weights[d] = w
        if w != 0:
            thetas[d] = exact_theta(scm, z, d, s0)
    return MixtureTruth(beta, weights, thetas)


# ---------------------------------------------------------------------------
# g-formula on the observed law


def _target_value(target, d: Bits, y):
    if target == "outcome":
        return y
    if target == "nonzero":
        return 1 if any(d) else 0
    return 1 if d == tuple(target) else 0


def g_formula_exact(law: ObservedLaw | DiscreteScm, z, target="outcome", s0=None):
    """Nested conditional-expectation formula for ``E[V(z)]`` evaluated on the exact law.

    ``target`` is ``"outcome"`` (``V = Y``), ``"nonzero"`` (``V = 1{D != 0}``)
    or a treatment vector ``d`` (``V = 1{D = d}``).  With ``s0`` given the
    formula is evaluated within that stratum.
    """
    if isinstance(law, DiscreteScm):
        law = exact_observed_law(law)
    z = as_bits(z)
    T = law.T
    if target not in ("outcome", "nonzero"):
        target = as_bits(target)
    cells = [(k, p) for k, p in law.cells.items() if p != 0]
    strata = sorted({k[0] for k, _ in cells}) if s0 is None else [s0]

    def rec(sv, t, dprefix):
        match = [
            (k, p)
            for k, p in cells
            if k[0] == sv and k[1][: t + 1] == z[: t + 1] and k[2][:t] == dprefix
        ]
        mass = sum(p for _, p in match)
        if mass == 0:
            raise OverlapError(f"overlap violated at period {t + 1} (s0={sv!r}, d_<t={dprefix})")
        if t == T - 1:
            return sum(p * _target_value(target, k[2], k[3]) for k, p in match) / mass
        out = 0
        for b in (0, 1):
            pb = sum(p for k, p in match if k[2][t] == b)
            if pb != 0:
                out += pb / mass * rec(sv, t + 1, dprefix + (b,))
        return out

    total = sum(p for k, p in cells if k[0] in strata)
    if total == 0:
        raise OverlapError(f"overlap violated: no mass at s0={s0!r}")
    acc = 0
    for sv in strata:
        ps = sum(p for k, p in cells if k[0] == sv)
        if ps != 0:
            acc += ps / total * rec(sv, 0, ())
    return acc


def identified_late(law: ObservedLaw | DiscreteScm, z, d=None, s0=None):
    """Identified ratio ``(E[Y(D(z))] - E[Y(D(0))]) / Pr(D(z) = d)`` (``d=None`` gives the mixture)."""
    z = as_bits(z)
    zero = (0,) * len(z)
    num = g_formula_exact(law, z, "outcome", s0) - g_formula_exact(law, zero, "outcome", s0)
    den = g_formula_exact(law, z, "nonzero" if d is None else as_bits(d), s0)
    if den == 0:
        raise EstimabilityError("complier mass is zero")
    return num / den


def identified_always_treat_strong(law: ObservedLaw | DiscreteScm, s0=None):
    """``(beta_11 S - tau_10 gamma_10 - tau_01 gamma_01) / gamma_11`` with ``gamma_d = Pr(D(1,1) = d)``.

    Equals the always-treat LATE when effects do not vary across complier groups.
    """
    if law.T != 2:
        raise ConfigError("the strong always-treat formula requires T=2")
    ones = (1, 1)
    gam = {d: g_formula_exact(law, ones, d, s0) for d in ((1, 1), (1, 0), (0, 1))}
    if gam[(1, 1)] == 0:
        raise EstimabilityError("complier mass is zero")
    beta = identified_late(law, ones, None, s0)
    t10 = identified_late(law, (1, 0), (1, 0), s0)
    t01 = identified_late(law, (0, 1), (0, 1), s0)
    return (beta * sum(gam.values()) - t10 * gam[(1, 0)] - t01 * gam[(0, 1)]) / gam[(1, 1)]


# ---------------------------------------------------------------------------
# named joint laws and conditional independence


@dataclass(frozen=True)
class NamedLaw:
    names: tuple[str, ...]
    cells: Mapping[tuple, Number]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"unknown variable {name!r}; have {self.names}") from None


def _fmt_bits(v: Bits) -> str:
    return "(" + ",".join(map(str, v)) + ")"


def joint_counterfactual_law(scm: DiscreteScm) -> NamedLaw:
    """Joint law of observed and counterfactual variables.

    Variables: ``type``, ``S0``, ``Z``, ``Z1..ZT``, ``D``, ``D1..DT``, ``Y``,
    ``D(z)`` and ``Y(D(z))`` for each ``z``, and ``Y(d)`` for each ``d``.
    """
    vecs = all_vectors(scm.T)
    names = ["type", "S0", "Z"] + [f"Z{t}" for t in range(1, scm.T + 1)]
    names += ["D"] + [f"D{t}" for t in range(1, scm.T + 1)] + ["Y"]
    names += [f"D{_fmt_bits(z)}" for z in vecs] + [f"Y(D{_fmt_bits(z)})" for z in vecs]
    names += [f"Y{_fmt_bits(d)}" for d in vecs]
    cells: dict[tuple, Number] = {}
    for k, typ in enumerate(scm.types):
        for z, pz in scm.instrument_law.items():
            d = typ.dz[z]
            row = (k, typ.s0, z, *z, d, *d, typ.yd[d])
            row += tuple(typ.dz[v] for v in vecs) + tuple(typ.yd[typ.dz[v]] for v in vecs)
            row += tuple(typ.yd[v] for v in vecs)
            cells[row] = cells.get(row, 0) + typ.prob * pz
    return NamedLaw(tuple(names), cells)


def _project(law: NamedLaw, names: Sequence[str]) -> dict:
    idx = [law.index(n) for n in names]
    out: dict[tuple, Number] = {}
    for key, p in law.cells.items():
        k = tuple(key[i] for i in idx)
        out[k] = out.get(k, 0) + p
    return out


def check_cond_indep(law: NamedLaw, x, y, given=()) -> float:
    """Max over cells of ``|P(x, y | c) - P(x | c) P(y | c)|``; zero-mass cells are skipped."""
    xs = [x] if isinstance(x, str) else list(x)
    ys = [y] if isinstance(y, str) else list(y)
    cs = [given] if isinstance(given, str) else list(given)
    joint = _project(law, cs + xs + ys)
    nc, nx = len(cs), len(xs)
    pc: dict = {}
    pxc: dict = {}
    pyc: dict = {}
    for k, p in joint.items():
        c, xv, yv = k[:nc], k[nc : nc + nx], k[nc + nx :]
        pc[c] = pc.get(c, 0) + p
        pxc[c, xv] = pxc.get((c, xv), 0) + p
        pyc[c, yv] = pyc.get((c, yv), 0) + p
    worst = 0.0
    for c, mc in pc.items():
        if mc == 0:
            continue
        xvals = [xv for (cc, xv) in pxc if cc == c]
        yvals = [yv for (cc, yv) in pyc if cc == c]
        for xv in xvals:
            for yv in yvals:
                pxy = joint.get(c + xv + yv, 0) / mc
                gap = abs(float(pxy - pxc[c, xv] / mc * (pyc[c, yv] / mc)))
                worst = max(worst, gap)
    return worst


# ---------------------------------------------------------------------------
# tabulated counterexamples

TABLE_IDS = ("T1_A", "T1_B", "T2_A", "T2_B")


def table_dgp(dgp_id: str) -> DiscreteScm:
    """The two counterexample pairs with identical observed laws but different LATEs.

    ``T1_*`` satisfy sequential monotonicity and differ only in ``Y(1,0)``;
    ``T2_*`` satisfy one-sided noncompliance and differ only in ``Y(0,0)``.
    Each (instrument, type) pair has probability 1/8.
    """
    if dgp_id not in TABLE_IDS:
        raise ConfigError(f"unknown table DGP {dgp_id!r}; expected one of {TABLE_IDS}")
    half = Fraction(1, 2)
    vecs = all_vectors(2)
    law = {z: Fraction(1, 4) for z in vecs}
    ident = {z: z for z in vecs}
    if dgp_id.startswith("T1"):
        flip = dgp_id == "T1_B"
        dz_b = dict(ident)
        dz_b[(0, 0)] = (0, 1)
        y_a = {d: Fraction(-2) for d in vecs}
        y_b = dict(y_a)
        y_a[(1, 0)] = Fraction(-2 if flip else 2)
        y_b[(1, 0)] = Fraction(2 if flip else -2)
        types = (LatentType(half, ident, y_a, name="A"), LatentType(half, dz_b, y_b, name="B"))
        return DiscreteScm(2, types, law, sequential_monotone=True)
    flip = dgp_id == "T2_B"
    dz_c = dict(ident)
    dz_c[(1, 1)] = (1, 0)
    y_c = {d: Fraction(2) for d in vecs}
    y_d = dict(y_c)
    y_c[(0, 0)] = Fraction(-2 if flip else 2)
    y_d[(0, 0)] = Fraction(2 if flip else -2)
    types = (LatentType(half, dz_c, y_c, name="C"), LatentType(half, ident, y_d, name="D"))
    return DiscreteScm(2, types, law, one_sided=True)


# ---------------------------------------------------------------------------
# random models


def _random_compliance(rng: np.random.Generator, T: int, one_sided: bool) -> dict:
    """Random causal compliance map: one bit per (period, encouragement prefix)."""
    bit: dict[tuple, int] = {}
    for t in range(T):
        for prefix in all_vectors(t + 1):
            b = int(rng.integers(0, 2))
            bit[prefix] = b * prefix[-1] if one_sided else b
    return {z: tuple(bit[z[: t + 1]] for t in range(T)) for z in all_vectors(T)}


def _make_staggered(dz: dict, T: int) -> dict:
    out = {}
    for z, d in dz.items():
        if z[0] == 1 and d[0] == 1:
            d = z
        out[z] = d
    return out


def random_discrete_scm(
    rng: np.random.Generator,
    T: int = 2,
    max_types: int = 6,
    one_sided: bool = True,
    sequential_monotone: bool = False,
    staggered: bool = False,
    n_strata: int = 1,
    homogeneous_effects: bool = False,
    require_compliers: Sequence = (),
    max_tries: int = 10_000,
) -> DiscreteScm:
    """Random finite SCM with a uniform instrument law.

    Compliance maps are drawn at random and rejection-sampled until they
    satisfy the requested assumption flags, and every vector in
    ``require_compliers`` has positive mass ``Pr(D(d) = d)``.  With
    ``homogeneous_effects`` each effect ``Y(d) - Y(0)`` depends only on the
    stratum, so any effect-compliance independence restriction holds.
    """
    vecs = all_vectors(T)
    law = {z: 1.0 / len(vecs) for z in vecs}
    effects = {s: {d: float(rng.normal(0, 2)) for d in vecs} for s in range(n_strata)}
    for s in effects:
        effects[s][(0,) * T] = 0.0
    required = [as_bits(v) for v in require_compliers]
    for _ in range(max_tries):
        k = int(rng.integers(max(2, n_strata), max_types + 1))
        probs = rng.dirichlet(np.ones(k))
        types = []
        for j in range(k):
            dz = _random_compliance(rng, T, one_sided)
            if staggered:
                dz = _make_staggered(dz, T)
            if sequential_monotone and not is_sequential_monotone(dz, T):
                break
            s = j % n_strata
            if homogeneous_effects:
                base = float(rng.normal())
                yd = {d: base + effects[s][d] for d in vecs}
            else:
                yd = {d: float(rng.normal(0, 2)) for d in vecs}
            types.append(LatentType(float(probs[j]), dz, yd, s0=float(s)))
        else:
            ok = all(
                any(t.dz[v] == v for t in types if t.s0 == s) for s in range(n_strata) for v in required
            )
            if ok:
                # renormalise away float drift so the sum check holds to 1e-12
                total = sum(t.prob for t in types)
                types = [LatentType(t.prob / total, t.dz, t.yd, t.s0) for t in types]
                return DiscreteScm(T, tuple(types), law, one_sided=one_sided, sequential_monotone=sequential_monotone)
    raise ConfigError("random SCM generator exhausted its rejection budget")


# ---------------------------------------------------------------------------
# sampling and weighted exact-law datasets


def sample_panel(scm: DiscreteScm, n: int, seed=0) -> PanelDataset:
    """Draw ``n`` observed rows; ``S_0`` is the type's stratum and later states are 0."""
    if n < 1:
        raise ConfigError("n must be ≥ 1")
    rng = np.random.default_rng(seed)
    tp = np.array([float(t.prob) for t in scm.types])
    zs = list(scm.instrument_law)
    zp = np.array([float(scm.instrument_law[z]) for z in zs])
    ti = rng.choice(len(tp), size=n, p=tp / tp.sum())
    zi = rng.choice(len(zs), size=n, p=zp / zp.sum())
    T = scm.T
    states = np.zeros((n, T, 1))
    z = np.array([zs[j] for j in zi], dtype=np.int8).reshape(n, T)
    d = np.empty((n, T), dtype=np.int8)
    y = np.empty(n)
    for i in range(n):
        typ = scm.types[ti[i]]
        di = typ.dz[tuple(int(v) for v in z[i])]
        d[i] = di
        y[i] = float(typ.yd[di])
        states[i, 0, 0] = typ.s0
    return PanelDataset(states, z, d, y)


def law_panel(law: ObservedLaw | DiscreteScm, copies: int = 5):
    """The exact law as a weighted dataset replicated ``copies`` times.

    Returns ``(dataset, folds)`` where ``folds[i]`` is the copy index.  With
    these folds every cross-fitting training set is again the exact law.
    """
    if isinstance(law, DiscreteScm):
        law = exact_observed_law(law)
    keys = sorted((k for k, p in law.cells.items() if p != 0), key=repr)
    m, T = len(keys), law.T
    states = np.zeros((m, T, 1))
    z = np.empty((m, T), dtype=np.int8)
    d = np.empty((m, T), dtype=np.int8)
    y = np.empty(m)
    w = np.empty(m)
    for i, (s0, zv, dv, yv) in enumerate(keys):
        states[i, 0, 0] = float(s0)
        z[i], d[i], y[i], w[i] = zv, dv, float(yv), float(law.cells[(s0, zv, dv, yv)])
    rep = lambda a: np.concatenate([a] * copies)
    ds = PanelDataset(rep(states), rep(z), rep(d), rep(y), weights=rep(w) / copies)
    folds = np.repeat(np.arange(copies), m)
    return ds, folds


# ---------------------------------------------------------------------------
# JSON


def _num_to_json(x):
    return str(x) if isinstance(x, Fraction) else float(x)


def _num_from_json(x):
    return Fraction(x) if isinstance(x, str) else float(x)


def _key(v: Bits) -> str:
    return "".join(map(str, v))


def scm_to_dict(scm: DiscreteScm) -> dict:
    return {
        "T": scm.T,
        "one_sided": scm.one_sided,
        "sequential_monotone": scm.sequential_monotone,
        "instrument_law": {_key(z): _num_to_json(p) for z, p in scm.instrument_law.items()},
        "types": [
            {
                "prob": _num_to_json(t.prob),
                "s0": t.s0,
                "name": t.name,
                "dz_map": {_key(z): _key(d) for z, d in t.dz.items()},
                "yd_map": {_key(d): _num_to_json(y) for d, y in t.yd.items()},
            }
            for t in scm.types
        ],
    }


def scm_from_dict(obj: dict) -> DiscreteScm:
    try:
        types = tuple(
            LatentType(
                _num_from_json(t["prob"]),
                {as_bits(z): as_bits(d) for z, d in t["dz_map"].items()},
                {as_bits(d): _num_from_json(y) for d, y in t["yd_map"].items()},
                float(t.get("s0", 0.0)),
                t.get("name", ""),
            )
            for t in obj["types"]
        )
        law = {as_bits(z): _num_from_json(p) for z, p in obj["instrument_law"].items()}
        return DiscreteScm(
            int(obj["T"]),
            types,
            law,
            one_sided=bool(obj.get("one_sided", False)),
            sequential_monotone=bool(obj.get("sequential_monotone", False)),
        )
    except KeyError as exc:
        raise ConfigError(f"discrete SCM file is missing key {exc}") from None


def save_scm(scm: DiscreteScm, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scm_to_dict(scm), fh, indent=2)


def load_scm(path) -> DiscreteScm:
    with open(path, encoding="utf-8") as fh:
        return scm_from_dict(json.load(fh))
