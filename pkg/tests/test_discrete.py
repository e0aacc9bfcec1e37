from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dynlate.discrete import (
    DiscreteScm,
    LatentType,
    NamedLaw,
    all_vectors,
    check_cond_indep,
    exact_counterfactuals,
    exact_late,
    exact_mixture,
    exact_observed_law,
    exact_theta,
    g_formula_exact,
    identified_always_treat_strong,
    identified_late,
    is_one_sided,
    is_sequential_monotone,
    is_staggered,
    joint_counterfactual_law,
    law_panel,
    laws_equal,
    load_scm,
    random_discrete_scm,
    sample_panel,
    save_scm,
    table_dgp,
)
from dynlate.errors import ConfigError, EstimabilityError, OverlapError

VECS2 = all_vectors(2)
seeds = st.integers(0, 2**32 - 1)


def perfect_compliance(T=2, y=None):
    vecs = all_vectors(T)
    y = y or {d: Fraction(sum(d) * 3 + 1) for d in vecs}
    typ = LatentType(Fraction(1), {z: z for z in vecs}, y)
    return DiscreteScm(T, (typ,), {z: Fraction(1, len(vecs)) for z in vecs}, one_sided=True)


def test_tabulated_lates():
    assert exact_late(table_dgp("T1_A"), (1, 0), (1, 0)) == 4
    assert exact_late(table_dgp("T1_B"), (1, 0), (1, 0)) == 0
    assert exact_late(table_dgp("T2_A"), (1, 1), (1, 1)) == 4
    assert exact_late(table_dgp("T2_B"), (1, 1), (1, 1)) == 0


def test_tabulated_observed_cells():
    # every (instrument, subpopulation) row carries mass 1/8
    joint = joint_counterfactual_law(table_dgp("T2_A"))
    zi, ti = joint.index("Z"), joint.index("type")
    rows = {}
    for k, p in joint.cells.items():
        rows[k[zi], k[ti]] = rows.get((k[zi], k[ti]), 0) + p
    assert len(rows) == 8 and set(rows.values()) == {Fraction(1, 8)}
    law = exact_observed_law(table_dgp("T2_A"))
    cell = {y: p for (s0, z, d, y), p in law.cells.items() if z == (0, 0) and d == (0, 0)}
    total = sum(cell.values())
    assert {y: p / total for y, p in cell.items()} == {-2: Fraction(1, 2), 2: Fraction(1, 2)}


def test_witness_laws_equal_and_distinct_pairs():
    assert laws_equal(exact_observed_law(table_dgp("T1_A")), exact_observed_law(table_dgp("T1_B")), 1e-12)
    assert laws_equal(exact_observed_law(table_dgp("T2_A")), exact_observed_law(table_dgp("T2_B")), 1e-12)
    assert not laws_equal(exact_observed_law(table_dgp("T1_A")), exact_observed_law(table_dgp("T2_A")), 1e-12)


def test_assumption_flags_of_tables():
    for k in ("T1_A", "T1_B"):
        assert all(is_sequential_monotone(t.dz, 2) for t in table_dgp(k).types)
    for k in ("T2_A", "T2_B"):
        assert all(is_one_sided(t.dz) for t in table_dgp(k).types)


def test_tabulated_zero_arm_mean():
    mean, probs = exact_counterfactuals(table_dgp("T2_A"), (0, 0))
    assert mean == 0 and probs[(0, 0)] == 1 and sum(probs.values()) == 1


def test_degenerate_single_type_law():
    scm = perfect_compliance()
    law = exact_observed_law(scm)
    assert len(law.cells) == 4
    for (s0, z, d, y), p in law.cells.items():
        assert z == d and p == Fraction(1, 4) and y == scm.types[0].yd[z]


def test_perfect_compliance_identities():
    scm = perfect_compliance()
    for z in VECS2:
        _, probs = exact_counterfactuals(scm, z)
        assert probs[z] == 1
    assert g_formula_exact(scm, (1, 1)) == scm.types[0].yd[(1, 1)]


def test_table_g_formula_and_pair_agreement():
    for z in VECS2:
        assert abs(g_formula_exact(table_dgp("T2_A"), z) - exact_counterfactuals(table_dgp("T2_A"), z)[0]) < 1e-12
        assert g_formula_exact(table_dgp("T1_A"), z) == g_formula_exact(table_dgp("T1_B"), z)


def test_undefined_late():
    with pytest.raises(EstimabilityError, match="undefined LATE"):
        exact_late(table_dgp("T2_A"), (0, 0), (1, 1))


def test_overlap_violation():
    scm = perfect_compliance()
    law = exact_observed_law(scm).__class__(2, {k: v for k, v in exact_observed_law(scm).cells.items() if k[1][0] == 0})
    with pytest.raises(OverlapError, match="overlap violated"):
        g_formula_exact(law, (1, 0))


@given(seeds)
def test_identification_identity_on_random_models(seed):
    rng = np.random.default_rng(seed)
    scm = random_discrete_scm(rng, T=2, one_sided=True, require_compliers=[(1, 0), (0, 1)])
    law = exact_observed_law(scm)
    for d in [(1, 0), (0, 1)]:
        assert abs(exact_late(scm, d, d) - identified_late(law, d, d)) < 1e-10


@given(seeds, st.integers(2, 3))
def test_mixture_identity(seed, T):
    rng = np.random.default_rng(seed)
    scm = random_discrete_scm(rng, T=T, one_sided=True)
    for z in all_vectors(T)[1:]:
        try:
            m = exact_mixture(scm, z)
        except EstimabilityError:
            assert all(t.dz[z] == (0,) * T for t in scm.types)
            continue
        assert abs(m.beta - sum(m.thetas[d] * w for d, w in m.weights.items() if w)) < 1e-10
        assert abs(sum(m.weights.values()) - 1) < 1e-12


@given(seeds)
def test_when_to_treat_mixture_is_singleton(seed):
    scm = random_discrete_scm(np.random.default_rng(seed), T=2, one_sided=True, require_compliers=[(0, 1)])
    m = exact_mixture(scm, (0, 1))
    assert abs(m.beta - exact_late(scm, (0, 1), (0, 1))) < 1e-12
    assert m.weights == {(0, 1): pytest.approx(1.0)}


@given(seeds, st.integers(1, 3))
def test_g_formula_matches_enumeration_with_strata(seed, n_strata):
    scm = random_discrete_scm(np.random.default_rng(seed), T=2, one_sided=True, n_strata=n_strata)
    law = exact_observed_law(scm)
    for z in VECS2:
        mean, probs = exact_counterfactuals(scm, z)
        assert abs(mean - g_formula_exact(law, z)) < 1e-10
        for d, p in probs.items():
            assert abs(p - g_formula_exact(law, z, d)) < 1e-10


@given(seeds)
def test_strong_formula_under_homogeneous_effects(seed):
    rng = np.random.default_rng(seed)
    scm = random_discrete_scm(rng, T=2, one_sided=True, homogeneous_effects=True, require_compliers=[(1, 1), (1, 0), (0, 1)])
    assert abs(identified_always_treat_strong(scm) - exact_late(scm, (1, 1), (1, 1))) < 1e-10


@given(seeds)
def test_random_flags_hold(seed):
    rng = np.random.default_rng(seed)
    scm = random_discrete_scm(rng, T=3, one_sided=True, staggered=True)
    assert all(is_one_sided(t.dz) and is_staggered(t.dz) for t in scm.types)
    scm = random_discrete_scm(rng, T=2, one_sided=False, sequential_monotone=True)
    assert all(is_sequential_monotone(t.dz, 2) for t in scm.types)


def test_theta_conditions_on_realised_vector():
    scm = table_dgp("T2_A")
    assert exact_theta(scm, (1, 1), (1, 0)) == 0  # type C: Y(1,0) - Y(0,0) = 2 - 2


def test_cond_indep_examples():
    coins = NamedLaw(("A", "B"), {(a, b): Fraction(1, 4) for a in (0, 1) for b in (0, 1)})
    assert check_cond_indep(coins, "A", "B") == 0
    dep = NamedLaw(("A", "B"), {(0, 0): Fraction(1, 2), (1, 1): Fraction(1, 2)})
    assert check_cond_indep(dep, "A", "B") == pytest.approx(0.25)
    joint = joint_counterfactual_law(table_dgp("T2_A"))
    assert check_cond_indep(joint, "Z", "type") < 1e-12


def test_instrument_tied_to_type_is_detected():
    # take the tabulated model but let Z_1 copy the type's compliance bit
    joint = joint_counterfactual_law(table_dgp("T2_A"))
    zi, ti = joint.index("Z1"), joint.index("type")
    names = joint.names
    cells = {}
    for k, p in joint.cells.items():
        k = list(k)
        k[zi] = 0 if k[ti] == 0 else 1
        cells[tuple(k)] = cells.get(tuple(k), 0) + p
    assert check_cond_indep(NamedLaw(names, cells), "Z1", "type") > 0.1


def test_validation_of_models():
    typ = LatentType(0.5, {z: z for z in VECS2}, {d: 0.0 for d in VECS2})
    with pytest.raises(ConfigError):
        DiscreteScm(2, (typ,), {z: 0.25 for z in VECS2})
    bad = LatentType(1.0, {z: (1, 1) for z in VECS2}, {d: 0.0 for d in VECS2})
    with pytest.raises(ConfigError):
        DiscreteScm(2, (bad,), {z: 0.25 for z in VECS2}, one_sided=True)


def test_json_round_trip(tmp_path):
    for k in ("T1_A", "T2_B"):
        path = tmp_path / f"{k}.json"
        save_scm(table_dgp(k), path)
        back = load_scm(path)
        assert laws_equal(exact_observed_law(back), exact_observed_law(table_dgp(k)), 0)
        assert exact_late(back, (1, 0), (1, 0)) == exact_late(table_dgp(k), (1, 0), (1, 0))


def test_sample_panel_frequencies():
    scm = table_dgp("T2_A")
    ds = sample_panel(scm, 40_000, 0)
    law = exact_observed_law(scm)
    for (s0, z, d, y), p in law.cells.items():
        hit = (ds.z == z).all(axis=1) & (ds.d == d).all(axis=1) & (ds.y == float(y))
        assert abs(hit.mean() - float(p)) < 4 * np.sqrt(float(p) * (1 - float(p)) / ds.n)


def test_law_panel_weights_sum_to_one():
    ds, folds = law_panel(table_dgp("T2_A"), copies=3)
    assert abs(ds.weights.sum() - 1) < 1e-12
    assert set(folds.tolist()) == {0, 1, 2}
