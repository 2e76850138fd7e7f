import dataclasses
import math
import os

import numpy as np
import pytest

from rescue_ipw.data import TrialDataset
from rescue_ipw.errors import TooManyFailures, TruncationUnsupported
from rescue_ipw.estimators import Estimand, estimate_balanced, estimate_treatment_policy
from rescue_ipw.simulate import SCENARIOS, generate_scenario
from rescue_ipw.tilt import Variant
from rescue_ipw.variance import (
    EstimatorSpec,
    bootstrap,
    influence_components,
    influence_se_balanced,
    resample_indices,
    weight_derivatives,
)

JOBS = max(1, min(8, os.cpu_count() or 1))


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("covs", [[], ["C"]])
def test_influence_values_are_centred(scenario1_data, variant, covs):
    res = estimate_balanced(scenario1_data, 0.9, variant=variant, propensity_covariates=covs)
    comp = influence_components(scenario1_data, res)
    for phi, est in ((comp.phi_mu1, res.mu1), (comp.phi_mu0, res.mu0), (comp.phi_mu, res.mu)):
        assert abs(phi.mean()) < 1e-8 * (1 + abs(est))
    assert np.array_equal(comp.phi_mu, comp.phi_mu1 - comp.phi_mu0)


def _fd_block(f, x, h_rel=1e-6):
    cols = []
    for j in range(x.shape[0]):
        h = h_rel * (1 + abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.column_stack(cols)


def _assert_rows_close(analytic, fd, rtol=1e-6):
    num = np.linalg.norm(analytic - fd, axis=1)
    den = np.linalg.norm(analytic, axis=1)
    live = den > 0
    assert np.all(num[~live] < 1e-12)
    assert np.max(num[live] / den[live]) < rtol


def test_derivative_blocks_match_finite_differences(scenario1_data):
    d = scenario1_data
    res = estimate_balanced(d, 0.9, propensity_covariates=["C"])
    m, prop = res.models, res.propensity
    der = weight_derivatives(d, m, prop)

    def at_lam(lam):
        return weight_derivatives(d, dataclasses.replace(m, lam=lam), prop).w_over_pi

    def at_omega(beta):
        omega = dataclasses.replace(m.omega, coefficients=beta)
        return weight_derivatives(d, dataclasses.replace(m, omega=omega), prop).w_over_pi

    def at_theta(theta):
        return weight_derivatives(d, m, dataclasses.replace(prop, coefficients=theta)).w_over_pi

    _assert_rows_close(der.d_lambda, _fd_block(at_lam, m.lam))
    _assert_rows_close(der.d_omega, _fd_block(at_omega, m.omega.coefficients))
    _assert_rows_close(der.d_theta, _fd_block(at_theta, prop.coefficients))


def test_duplicating_records_shrinks_se_by_root_two(scenario1_data):
    d = scenario1_data
    res = estimate_balanced(d, 0.9)
    se = influence_se_balanced(d, res)
    dd = d.take(np.r_[np.arange(len(d)), np.arange(len(d))])
    se2 = influence_se_balanced(dd, estimate_balanced(dd, 0.9))
    for a, b in zip(se, se2):
        assert b / a == pytest.approx(1 / math.sqrt(2), rel=1e-10)


def test_flipped_fit_uses_relabelled_data():
    d = generate_scenario(SCENARIOS[1], 800, 14, retain_l=True)
    a = influence_se_balanced(d, estimate_balanced(d, 0.9, flip=True))
    b = influence_se_balanced(d.flip_arms(), estimate_balanced(d.flip_arms(), 0.9))
    assert a == b


def test_truncated_fit_refused(scenario1_data):
    res = estimate_balanced(scenario1_data, 0.9, truncation=(1, 99))
    with pytest.raises(TruncationUnsupported):
        influence_se_balanced(scenario1_data, res)
    with pytest.raises(ValueError):
        influence_se_balanced(scenario1_data, estimate_treatment_policy(scenario1_data))


def test_bootstrap_is_a_pure_function_of_its_seed(scenario1_data):
    spec = EstimatorSpec(Estimand.BALANCED, {"rho": 0.9})
    a = bootstrap(scenario1_data, spec, 24, seed=5)
    b = bootstrap(scenario1_data, spec, 24, seed=5, jobs=3)
    assert np.array_equal(a.replicates, b.replicates)
    assert (a.se, a.ci) == (b.se, b.ci)
    c = bootstrap(scenario1_data, spec, 24, seed=6)
    assert not np.array_equal(a.replicates, c.replicates)
    assert a.ci[0] <= a.ci[1]
    assert a.se == pytest.approx(np.std(a.replicates, ddof=1), rel=1e-15)


def test_resamples_keep_stratum_counts():
    groups = [np.arange(0, 7), np.arange(7, 30), np.arange(30, 31)]
    for b in range(50):
        idx = resample_indices(groups, 3, b)
        for g in groups:
            assert np.isin(idx, g).sum() == g.shape[0]
    assert np.array_equal(resample_indices(groups, 3, 9), resample_indices(groups, 3, 9))


def test_arm_strata_equal_explicit_labels(scenario1_data):
    spec = EstimatorSpec(Estimand.TREATMENT_POLICY)
    a = bootstrap(scenario1_data, spec, 20, seed=1, strata="arm")
    b = bootstrap(scenario1_data, spec, 20, seed=1, strata=list(scenario1_data.r))
    c = bootstrap(scenario1_data.with_strata(scenario1_data.r), spec, 20, seed=1)
    assert np.array_equal(a.replicates, b.replicates)
    assert np.array_equal(a.replicates, c.replicates)


def test_arm_stratified_resamples_keep_arm_sizes(scenario1_data):
    from rescue_ipw.variance import _stratum_groups

    groups = _stratum_groups(scenario1_data, "arm")
    for b in range(5):
        idx = resample_indices(groups, 2, b)
        assert scenario1_data.r[idx].sum() == scenario1_data.r.sum()


def test_too_many_failures():
    # the control arm has a single non-switcher, so many resamples have none
    rng = np.random.default_rng(0)
    n = 40
    r = np.r_[np.ones(20, int), np.zeros(20, int)]
    s = np.r_[rng.integers(0, 2, 20), np.ones(19, int), 0]
    d = TrialDataset(r, s, rng.standard_normal(n), rng.standard_normal((n, 1)), np.ones(n, bool),
                     rng.standard_normal((n, 1)), ("c",), ("l",))
    with pytest.raises(TooManyFailures):
        bootstrap(d, EstimatorSpec(Estimand.HYPOTHETICAL), 50, seed=0, strata="arm")
    with pytest.raises(ValueError):
        bootstrap(d, EstimatorSpec(Estimand.TREATMENT_POLICY), 1, seed=0)


def test_policy_bootstrap_approaches_two_sample_formula(scenario1_data):
    d = scenario1_data
    bs = bootstrap(d, EstimatorSpec(Estimand.TREATMENT_POLICY), 5000, seed=11, jobs=JOBS)
    t = d.treated
    formula = math.sqrt(d.y[t].var(ddof=1) / t.sum() + d.y[~t].var(ddof=1) / (~t).sum())
    # Monte-Carlo SE of a bootstrap SD at B=5000 is about 1%
    assert bs.se == pytest.approx(formula, rel=0.05)
    assert bs.failures == 0


@pytest.mark.slow
def test_bootstrap_se_near_empirical_scenario_one_se(scenario1_data):
    bs = bootstrap(scenario1_data, EstimatorSpec(Estimand.BALANCED, {"rho": 0.9}), 1000, seed=2, jobs=JOBS)
    assert bs.se == pytest.approx(0.044, rel=0.20)
