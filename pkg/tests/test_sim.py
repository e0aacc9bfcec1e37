import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special, stats

from dynlate.data import validate_dataset
from dynlate.errors import ConfigError, EstimabilityError
from dynlate.sim import (
    EncouragementPolicy,
    LogisticLinearScm,
    fix_instruments,
    fix_treatments,
    policy,
    rollout_counterfactual,
    simulate,
    true_late_mc,
    true_mixture_mc,
    true_policy_late_mc,
)


def test_one_sided_pathwise_when_to_treat():
    ds = simulate(LogisticLinearScm(T=2, p=10), 2000, 0)
    assert np.all(ds.d <= ds.z)


def test_staggered_rows_follow_instruments_after_first_take_up():
    ds = simulate(LogisticLinearScm(T=3, p=4, variant="staggered_dgp"), 5000, 1)
    took = ds.d[:, 0] == 1
    assert took.any()
    np.testing.assert_array_equal(ds.d[took, 1:], ds.z[took, 1:])


def test_first_instrument_is_balanced():
    # oracle: E[logistic(S_0[0])] by quadrature against the standard normal
    oracle, _ = integrate.quad(lambda s: special.expit(s) * stats.norm.pdf(s), -np.inf, np.inf)
    ds = simulate(LogisticLinearScm(T=1, p=1), 1_000_000, 7)
    assert abs(ds.z[:, 0].mean() - oracle) < 0.01
    assert abs(oracle - 0.5) < 1e-12


def test_confounder_clip_bounds():
    draws = rollout_counterfactual(LogisticLinearScm(T=2, p=2), 100_000, 3, [fix_instruments((1, 1))])
    assert draws.u.min() >= -2.0 and draws.u.max() <= 2.0
    # clipping, not resampling: the bounds carry point mass
    assert np.mean(np.abs(draws.u) == 2.0) > 0.03


@given(st.integers(0, 2**31 - 1), st.sampled_from(["when_to_treat_dgp", "staggered_dgp"]))
def test_simulation_is_deterministic(seed, variant):
    scm = LogisticLinearScm(T=2, p=3, variant=variant)
    assert simulate(scm, 50, seed).equals(simulate(scm, 50, seed))


def test_block_structure_does_not_change_prefix():
    # rows come from counter-based blocks, so a longer draw extends a shorter one
    scm = LogisticLinearScm(T=2, p=2)
    a, b = simulate(scm, 9000, 5), simulate(scm, 20000, 5)
    np.testing.assert_array_equal(a.y, b.y[:9000])


def test_zero_instruments_and_zero_treatments_agree():
    scm = LogisticLinearScm(T=2, p=3)
    draws = rollout_counterfactual(scm, 5000, 2, [fix_treatments((0, 0)), fix_instruments((0, 0))])
    np.testing.assert_array_equal(draws["d00"].y, draws["z00"].y)
    assert not draws["z00"].d.any()


def test_instrument_off_in_period_two_blocks_treatment():
    draws = rollout_counterfactual(LogisticLinearScm(T=2, p=3), 5000, 2, [fix_instruments((1, 0))])
    assert not draws["z10"].d[:, 1].any()


def test_first_period_complier_policy_under_staggering():
    scm = LogisticLinearScm(T=3, p=2, variant="staggered_dgp")
    draws = rollout_counterfactual(scm, 5000, 4, [policy(EncouragementPolicy.first_period_complier())])
    d = draws["first_period_complier"].d
    np.testing.assert_array_equal(d, np.repeat(d[:, :1], 3, axis=1))


def test_common_random_numbers_for_equal_interventions():
    scm = LogisticLinearScm(T=2, p=2)
    draws = rollout_counterfactual(scm, 3000, 9, [fix_treatments((1, 0), "a"), fix_treatments((1, 0), "b")])
    np.testing.assert_array_equal(draws["a"].y, draws["b"].y)


def test_staggered_rollouts_comply_after_first_take_up():
    scm = LogisticLinearScm(T=2, p=2, variant="staggered_dgp")
    draws = rollout_counterfactual(scm, 20000, 1, [fix_instruments(z) for z in [(1, 0), (1, 1)]])
    for tag, z in (("z10", (1, 0)), ("z11", (1, 1))):
        d = draws[tag].d
        took = d[:, 0] == 1
        assert np.all(d[took, 1] == z[1])


def test_treatment_late_in_second_period_is_the_coefficient():
    r = true_late_mc(LogisticLinearScm(T=2, p=10), (0, 1), (0, 1), 1_000_000, 1)
    assert abs(r.value - 1.0) < 0.01


def test_null_effect_truth_is_zero():
    scm = LogisticLinearScm(T=2, p=3, treatment_effect=0.0)
    for z in [(1, 0), (0, 1)]:
        r = true_late_mc(scm, z, z, 200_000, 3)
        assert abs(r.value) <= 3 * r.se + 1e-12
    r = true_mixture_mc(scm, (1, 1), 200_000, 3)
    assert abs(r.value) <= 3 * r.se + 1e-12


def test_policy_truth_is_finite():
    r = true_policy_late_mc(LogisticLinearScm(T=2, p=2, variant="staggered_dgp"), 100_000, 2)
    assert np.isfinite(r.value) and 0 < r.complier_prob < 1


def test_simulated_data_passes_validation():
    ds = simulate(LogisticLinearScm(T=3, p=2, variant="staggered_dgp"), 100_000, 11)
    rep = validate_dataset(ds, require_one_sided=True, require_staggered=True)
    assert rep.ok


def test_counterfactual_csv(tmp_path):
    draws = rollout_counterfactual(LogisticLinearScm(T=2, p=1), 4, 0, [fix_instruments((1, 1))])
    path = tmp_path / "cf.csv"
    draws.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "u,y_cf_z11,d_cf_z11_1,d_cf_z11_2"
    assert len(lines) == 5


def test_invalid_parameters():
    with pytest.raises(ConfigError):
        LogisticLinearScm(T=0)
    with pytest.raises(ConfigError):
        LogisticLinearScm(variant="nope")
    with pytest.raises(ConfigError):
        true_late_mc(LogisticLinearScm(T=2, p=1), (1, 0), (1, 1), 1000)


def test_no_compliers_drawn():
    # the all-zero instrument never produces a treated unit
    scm = LogisticLinearScm(T=2, p=1)
    with pytest.raises(EstimabilityError, match="no compliers drawn"):
        true_mixture_mc(scm, (0, 0), 1000)
