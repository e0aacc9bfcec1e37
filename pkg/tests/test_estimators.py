import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynlate.data import PanelDataset
from dynlate.discrete import law_panel, random_discrete_scm, sample_panel
from dynlate.errors import ConfigError, DataValidationError, EstimabilityError
from dynlate.estimators import (
    EstimandSpec,
    EstimateConfig,
    conditional_compliance,
    conditional_late,
    estimate,
    estimate_all,
    estimate_always_treat_general_2p,
    estimate_always_treat_staggered,
    estimate_always_treat_strong,
    estimate_counterfactual_mean,
    estimate_mixture_beta,
    estimate_when_to_treat,
    moment_from_values,
    moment_phi,
)
from dynlate.learners import LearnerSpec
from dynlate.sim import LogisticLinearScm, fix_instruments, rollout_counterfactual, simulate
from dynlate.verify import exact_estimand

SAT = EstimateConfig(learner=LearnerSpec.saturated())
ALL_T2 = [
    "when_to_treat(1)", "when_to_treat(2)", "mixture(10)", "mixture(01)", "mixture(11)",
    "always_treat_staggered", "always_treat_strong", "always_treat_general_2p",
    "counterfactual_mean(00)", "counterfactual_mean(11)", "compliance_prob(11,10)", "compliance_prob(11,11)",
]


@pytest.fixture(scope="module")
def sim_data():
    return simulate(LogisticLinearScm(T=2, p=10), 5000, 21)


@pytest.fixture(scope="module")
def stag_data():
    return simulate(LogisticLinearScm(T=2, p=10, variant="staggered_dgp"), 5000, 22)


def test_moment_degenerate_cases():
    y = np.array([1.0, 2.0, 3.0])
    ones, zeros = [np.ones(3)] * 2, [np.zeros(3)] * 2
    np.testing.assert_array_equal(moment_from_values(zeros, ones, y), y)
    f = [np.array([5.0, 6.0, 7.0]), np.array([1.0, 1.0, 1.0])]
    np.testing.assert_array_equal(moment_from_values(f, zeros, y), f[0])


def complier_scm(seed, n_strata=2):
    rng = np.random.default_rng(seed)
    return random_discrete_scm(
        rng, T=2, one_sided=True, staggered=True, homogeneous_effects=True, n_strata=n_strata,
        require_compliers=[(1, 0), (0, 1), (1, 1)],
    )


@settings(max_examples=15)
@given(st.integers(0, 10_000))
def test_saturated_estimators_reproduce_exact_values(seed):
    scm = complier_scm(seed)
    ds, folds = law_panel(scm)
    specs = [EstimandSpec.parse(s, 2) for s in ALL_T2]
    for spec, rep in zip(specs, estimate_all(ds, SAT, specs, folds)):
        assert abs(rep.point - exact_estimand(scm, spec)) < 1e-6, spec.label


def test_moment_phi_mean_is_counterfactual_mean():
    scm = complier_scm(3)
    ds, folds = law_panel(scm)
    ns = SAT.nuisances(ds, folds)
    for z in [(0, 0), (1, 0), (0, 1), (1, 1)]:
        phi = moment_phi(ns, z)
        truth = exact_estimand(scm, EstimandSpec("counterfactual_mean", 2, z))
        assert abs(np.dot(ds.weights, phi) / ds.weights.sum() - truth) < 1e-10


def test_conditional_late_per_cell():
    scm = complier_scm(8, n_strata=2)
    ds, folds = law_panel(scm)
    ns = SAT.nuisances(ds, folds)
    for s0 in (0.0, 1.0):
        for spec in (EstimandSpec.when_to_treat(2, 1), EstimandSpec.when_to_treat(2, 2), EstimandSpec("always_treat_staggered", 2)):
            got = conditional_late(ns, [s0], spec)
            assert abs(got - exact_estimand(scm, spec, s0=s0)) < 1e-6


def test_conditional_aggregation_identity(sim_data):
    spec = EstimandSpec.when_to_treat(2, 2)
    cfg = EstimateConfig(seed=1)
    ns = cfg.nuisances(sim_data)
    s0 = sim_data.states[:, 0, :]
    late, comp = conditional_late(ns, s0, spec), conditional_compliance(ns, s0, spec)
    agg = np.sum(late * comp) / np.sum(comp)
    rep = estimate(sim_data, cfg, spec, ns)
    assert abs(agg - rep.point) < 3 * rep.std_error


def test_homogeneous_conditional_late_is_flat(sim_data):
    # the second-period effect is the same for every unit
    ns = EstimateConfig(seed=2).nuisances(sim_data)
    grid = np.zeros((5, 10))
    grid[:, 0] = np.linspace(-1, 1, 5)
    vals = conditional_late(ns, grid, EstimandSpec.when_to_treat(2, 2))
    assert np.all(np.abs(vals - 1.0) < 0.5)


def test_ci_shape_and_normal_quantile(sim_data):
    rep = estimate_when_to_treat(sim_data, EstimateConfig(seed=3), 2)
    q = 1.959963984540054
    assert abs((rep.ci[1] - rep.ci[0]) - 2 * q * rep.sigma / math.sqrt(sim_data.n)) < 1e-12
    assert rep.std_error >= 0 and rep.denom > 0.01
    assert set(rep.to_dict()) == {"estimand", "point", "se", "ci", "n", "denom", "flags"}


def test_flags_do_not_change_the_point(sim_data):
    a = estimate_when_to_treat(sim_data, EstimateConfig(seed=4), 1)
    b = estimate_when_to_treat(sim_data, EstimateConfig(seed=4, weight_flag=1.0), 1)
    assert a.point == b.point and any(f.startswith("large_weight") for f in b.flags)


def test_counterfactual_mean_against_rollout():
    scm = LogisticLinearScm(T=2, p=10)
    ds = simulate(scm, 100_000, 5)
    rep = estimate_counterfactual_mean(ds, EstimateConfig(seed=5), (0, 0))
    truth = rollout_counterfactual(scm, 400_000, 99, [fix_instruments((0, 0))])["z00"].y.mean()
    assert abs(rep.point - truth) < 3 * rep.std_error


def test_compliance_of_zero_arm_is_one(sim_data):
    rep = estimate(sim_data, EstimateConfig(seed=6), EstimandSpec.parse("compliance_prob(00,00)", 2))
    assert abs(rep.point - 1) < 1e-3


def test_mixture_equals_when_to_treat_for_unit_vector(sim_data):
    cfg = EstimateConfig(seed=7)
    ns = cfg.nuisances(sim_data)
    m = estimate_mixture_beta(sim_data, cfg, (0, 1), ns)
    t = estimate_when_to_treat(sim_data, cfg, 2, ns)
    assert abs(m.point - t.point) < 2 * math.hypot(m.std_error, t.std_error)


def test_general_and_strong_agree_under_homogeneity(sim_data):
    cfg = EstimateConfig(seed=8)
    ns = cfg.nuisances(sim_data)
    strong = estimate_always_treat_strong(sim_data, cfg, ns)
    general = estimate_always_treat_general_2p(sim_data, cfg, ns)
    assert general.flags == ["point_only"] and math.isnan(general.std_error)
    assert abs(strong.point - general.point) < 3 * strong.std_error


def test_general_and_staggered_agree_on_staggered_data(stag_data):
    cfg = EstimateConfig(seed=9)
    ns = cfg.nuisances(stag_data)
    stag = estimate_always_treat_staggered(stag_data, cfg, ns)
    general = estimate_always_treat_general_2p(stag_data, cfg, ns)
    assert abs(stag.point - general.point) < 3 * stag.std_error


def test_staggered_with_perfect_compliance_is_a_mean_difference():
    ds0 = simulate(LogisticLinearScm(T=2, p=3), 3000, 10)
    ds = PanelDataset(ds0.states, ds0.z, ds0.z, ds0.y)
    cfg = EstimateConfig(seed=10)
    ns = cfg.nuisances(ds)
    stag = estimate_always_treat_staggered(ds, cfg, ns)
    diff = estimate_counterfactual_mean(ds, cfg, (1, 1), ns).point - estimate_counterfactual_mean(ds, cfg, (0, 0), ns).point
    assert abs(stag.denom - 1) < 1e-10
    assert abs(stag.point - diff) < 1e-10


def test_strong_reduces_to_mixture_with_full_second_period_compliance():
    # after Z_1 = 1 the second period copies the first, so D(1,1) is (0,0) or (1,1)
    ds0 = simulate(LogisticLinearScm(T=2, p=3), 3000, 11)
    d = ds0.d.copy()
    d[:, 1] = np.where(ds0.z[:, 0] == 1, d[:, 0] * ds0.z[:, 1], d[:, 1])
    ds = PanelDataset(ds0.states, ds0.z, d, ds0.y)
    cfg = EstimateConfig(learner=LearnerSpec(), seed=11)
    ns = cfg.nuisances(ds)
    strong = estimate_always_treat_strong(ds, cfg, ns)
    beta = estimate_mixture_beta(ds, cfg, (1, 1), ns)
    gam = strong.fold_means["gamma"]
    assert abs(gam["10"]) < 1e-3 and abs(gam["01"]) < 1e-3
    assert abs(strong.point - beta.point) < 0.05


def test_staggered_on_non_staggered_data(sim_data):
    with pytest.raises(EstimabilityError, match="staggered compliance violated"):
        estimate_always_treat_staggered(sim_data, EstimateConfig())


def test_one_sided_violation_is_a_data_error(sim_data):
    z, d = sim_data.z.copy(), sim_data.d.copy()
    z[0], d[0] = (0, 1), (1, 1)
    ds = PanelDataset(sim_data.states, z, d, sim_data.y)
    with pytest.raises(DataValidationError, match="one-sided"):
        estimate_when_to_treat(ds, EstimateConfig(), 1)


def test_small_complier_mass():
    ds0 = simulate(LogisticLinearScm(T=2, p=2), 2000, 12)
    d = ds0.d.copy()
    d[:, 0] = 0
    ds = PanelDataset(ds0.states, ds0.z, d, ds0.y)
    with pytest.raises(EstimabilityError, match="complier mass too small"):
        estimate_when_to_treat(ds, EstimateConfig(), 1)


def test_sampled_discrete_data_within_sampling_error():
    scm = complier_scm(3)
    ds = sample_panel(scm, 10_000, 1)
    for name in ["when_to_treat(1)", "when_to_treat(2)", "mixture(11)", "always_treat_strong"]:
        spec = EstimandSpec.parse(name, 2)
        rep = estimate(ds, SAT, spec)
        assert abs(rep.point - exact_estimand(scm, spec)) < 3 * rep.std_error


def test_erm_representer_pipeline(sim_data):
    rep = estimate_when_to_treat(sim_data, EstimateConfig(seed=13, riesz="erm"), 2)
    assert abs(rep.point - 1.0) < 0.5


@pytest.mark.parametrize(
    "text,kind,z,d",
    [
        ("when_to_treat(2)", "when_to_treat", (0, 1), (0, 1)),
        ("when_to_treat(10)", "when_to_treat", (1, 0), (1, 0)),
        ("mixture(11)", "mixture", (1, 1), None),
        ("compliance_prob(11,10)", "compliance_prob", (1, 1), (1, 0)),
        ("always_treat_staggered", "always_treat_staggered", None, None),
    ],
)
def test_spec_parsing(text, kind, z, d):
    spec = EstimandSpec.parse(text, 2)
    assert (spec.kind, spec.z, spec.d) == (kind, z, d)


@pytest.mark.parametrize("text", ["bogus", "when_to_treat(11)", "mixture", "compliance_prob(11)", "when_to_treat(3)"])
def test_spec_rejections(text):
    with pytest.raises((ConfigError, ValueError)):
        EstimandSpec.parse(text, 2)


def test_general_requires_two_periods():
    with pytest.raises(ConfigError):
        EstimandSpec("always_treat_general_2p", 3)


def test_config_validation():
    with pytest.raises(ConfigError):
        EstimateConfig(level=1.5)
    with pytest.raises(ConfigError):
        EstimateConfig(folds=1)
