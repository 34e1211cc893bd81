import numpy as np
import pytest
from scipy.stats import norm

from elchange.elcore import PreparedDesign, delta_n
from elchange.errors import DimensionError, InsufficientDataError, SingularDesignError
from elchange.inference import (
    ConfidenceQuery,
    TestConfig,
    check_assumptions,
    confidence_region_membership,
    estimate_first_segment,
    test_changepoint,
    z_statistic,
)
from elchange.model import (
    CoefficientPair,
    Design,
    ErrorSpec,
    generate_design,
    generate_response,
    sequence_beta,
)

from oracles import normal_equations


def h0_data(n, p, k, seed, law="gaussian"):
    d = generate_design(n, p, k, seed=seed)
    beta = sequence_beta(p)
    Y = generate_response(d, CoefficientPair.no_change(beta), ErrorSpec.from_name(law), seed=seed + 1)
    return d, Y, beta


# -- first-segment estimation --------------------------------------------------------


def test_estimate_hand_example():
    d = Design(np.ones((6, 1)), 4)
    beta, s2 = estimate_first_segment(d, [1.0, 2.0, 3.0, 4.0, 9.0, 9.0])
    assert beta[0] == pytest.approx(2.5, abs=1e-14)
    assert s2 == pytest.approx(5 / 3, abs=1e-14)


def test_estimate_noiseless():
    d = generate_design(40, 4, 20, seed=0)
    beta = np.array([1.0, -1.0, 2.0, 0.5])
    bhat, s2 = estimate_first_segment(d, d.X @ beta)
    np.testing.assert_allclose(bhat, beta, atol=1e-12)
    assert 0.0 <= s2 < 1e-25


def test_estimate_matches_normal_equations():
    d, Y, _ = h0_data(120, 6, 50, seed=3)
    bhat, s2 = estimate_first_segment(d, Y)
    ref = normal_equations(d.X[:50], Y[:50])
    np.testing.assert_allclose(bhat, ref, rtol=1e-10)
    r = Y[:50] - d.X[:50] @ ref
    assert s2 == pytest.approx(r @ r / 44, rel=1e-10)


def test_estimate_errors():
    d = generate_design(20, 5, 5, seed=0)
    with pytest.raises(InsufficientDataError):
        estimate_first_segment(d, np.zeros(20))
    X = np.ones((20, 2))
    X[10:, 1] = np.arange(10)
    with pytest.raises(SingularDesignError):
        estimate_first_segment(Design(X, 8), np.arange(20.0))


def test_estimated_path_needs_k_above_p():
    d = generate_design(30, 5, 4, seed=0)
    with pytest.raises(InsufficientDataError):
        test_changepoint(d, np.zeros(30))


# -- statistic --------------------------------------------------------------------


def test_z_statistic_examples():
    assert z_statistic(np.array([0.5]), np.array([[4.0]]), 2.0, 2, 1) == pytest.approx(-0.875, abs=1e-15)
    assert z_statistic(np.zeros(3), np.eye(3), 30.0, 10, 3) == pytest.approx(-1.0)
    V = np.diag([1.0, 2.0])
    psi = np.array([0.3, -0.2])
    base = z_statistic(psi, V, 5.0, 4, 2) * 5 / 4 + 2
    scaled = z_statistic(3 * psi, V, 5.0, 4, 2) * 5 / 4 + 2
    assert scaled == pytest.approx(9 * base, rel=1e-12)
    with pytest.raises(ValueError):
        z_statistic(psi, V, 0.0, 4, 2)


def test_result_invariants():
    d, Y, beta = h0_data(200, 5, 100, seed=1)
    res = test_changepoint(d, Y, TestConfig(beta0=beta))
    assert res.reject == (abs(res.z_value) >= res.critical_value)
    assert 0.0 <= res.p_value <= 1.0
    assert res.p_value == pytest.approx(2 * norm.sf(abs(res.z_value)))
    assert res.critical_value == pytest.approx(1.959963984540054)
    assert res.beta_source == "known" and res.sigma2_source == "estimated"
    r = Y[:100] - d.X[:100] @ beta
    assert res.sigma2_used == pytest.approx(r @ r / 95, rel=1e-12)


def test_statistic_matches_components():
    d, Y, beta = h0_data(150, 4, 60, seed=2)
    cfg = TestConfig(beta0=beta, sigma2=1.0, fourth_moment=3.0)
    res = test_changepoint(d, Y, cfg)
    assert res.delta_n == pytest.approx(delta_n(d, 1.0, 3.0), rel=1e-12)
    assert res.z_value == pytest.approx((res.quadratic_form - 4) / (res.delta_n / 150), rel=1e-12)
    prep = PreparedDesign(d)
    assert test_changepoint(d, Y, cfg, prep).z_value == res.z_value


def test_tie_rejects():
    d, Y, beta = h0_data(100, 3, 50, seed=0)
    z = test_changepoint(d, Y, TestConfig(beta0=beta)).z_value
    assert test_changepoint(d, Y, TestConfig(beta0=beta, critical_value=abs(z))).reject


def test_monotone_in_critical_value():
    d, Y, beta = h0_data(100, 3, 50, seed=4)
    decisions = [test_changepoint(d, Y, TestConfig(beta0=beta, critical_value=c)).reject
                 for c in np.linspace(0, 5, 51)]
    assert all(a or not b for a, b in zip(decisions, decisions[1:]))


def test_h0_rejection_rate_at_moderate_size():
    d = generate_design(200, 5, 100, seed=0)
    beta = sequence_beta(5)
    prep = PreparedDesign(d)
    cfg = TestConfig(beta0=beta)
    rej = 0
    for r in range(400):
        Y = generate_response(d, CoefficientPair.no_change(beta), ErrorSpec.gaussian(), seed=10_000 + r)
        rej += test_changepoint(d, Y, cfg, prep).reject
    assert 0.02 <= rej / 400 <= 0.15


def test_large_change_rejects():
    d = generate_design(200, 50, 75, seed=0)
    beta = sequence_beta(50)
    Y = generate_response(d, CoefficientPair(beta, 1 - beta), ErrorSpec.gaussian(), seed=1)
    res = test_changepoint(d, Y, TestConfig(beta0=beta))
    assert res.reject and abs(res.z_value) > 100


def test_noiseless_data_is_degenerate_on_both_paths():
    d = generate_design(60, 3, 30, seed=5)
    beta = np.array([1.0, 2.0, 3.0])
    Y = d.X @ beta
    known = test_changepoint(d, Y, TestConfig(beta0=beta))
    est = test_changepoint(d, Y)
    for res in (known, est):
        assert res.degenerate
        assert np.isnan(res.z_value)
        assert not res.reject
    assert known.to_dict()["z_value"] is None


def test_to_dict_is_plain():
    import json

    d, Y, beta = h0_data(80, 2, 40, seed=6)
    out = test_changepoint(d, Y, TestConfig(beta0=beta)).to_dict()
    json.dumps(out)
    assert set(out["assumptions"]) >= {"a5_first", "a6_second", "warnings"}


def test_config_validation():
    with pytest.raises(ValueError):
        TestConfig(alpha=0.0)
    with pytest.raises(ValueError):
        TestConfig(alpha=1.0)
    with pytest.raises(ValueError):
        TestConfig(critical_value=-1.0)
    with pytest.raises(ValueError):
        TestConfig(sigma_convention="other")
    d = generate_design(20, 2, 10, seed=0)
    with pytest.raises(DimensionError):
        test_changepoint(d, np.zeros(20), TestConfig(beta0=[1.0]))


# -- assumptions --------------------------------------------------------------------


def test_assumption_examples():
    rep = check_assumptions(600, 350, 300)
    assert rep.a5_first == pytest.approx(300 * 350**-0.25, rel=1e-12)
    assert rep.a5_first == pytest.approx(69.3, abs=0.1)
    assert not rep.ok

    rep = check_assumptions(200, 100, 5)
    assert rep.a6_first == pytest.approx(1.25, rel=1e-12)
    assert any("k = 1.25" in w for w in rep.warnings)

    for k in (2, 50, 98):
        assert check_assumptions(100, k, 1).ok


def test_assumption_values_finite_and_q_checked():
    rep = check_assumptions(1000, 300, 7, q=6)
    vals = [rep.a5_first, rep.a5_second, rep.a6_first, rep.a6_second, rep.p_cubed_over_n]
    assert all(np.isfinite(v) and v >= 0 for v in vals)
    with pytest.raises(ValueError):
        check_assumptions(100, 50, 2, q=3)


# -- confidence region ---------------------------------------------------------------


def test_membership_zero_delta_reproduces_test():
    d, Y, beta = h0_data(200, 5, 100, seed=7)
    cfg = TestConfig(beta0=beta)
    res = test_changepoint(d, Y, cfg)
    member, z = confidence_region_membership(d, Y, beta, ConfidenceQuery(np.zeros(5)), cfg)
    assert z == res.z_value
    assert member == (not res.reject)


def test_membership_true_alternative_difference():
    d = generate_design(200, 50, 75, seed=0)
    beta = sequence_beta(50)
    Y = generate_response(d, CoefficientPair(beta, 1 - beta), ErrorSpec.gaussian(), seed=3)
    # exact moments: at p = 50 the k - p variance estimate is far too large
    cfg = TestConfig(beta0=beta, sigma2=1.0, fourth_moment=3.0)
    member, z = confidence_region_membership(d, Y, beta, beta - (1 - beta), cfg)
    assert member
    assert not confidence_region_membership(d, Y, beta, np.zeros(50), cfg)[0]


def test_membership_coverage_of_true_shift():
    d = generate_design(200, 5, 100, seed=0)
    beta = sequence_beta(5)
    delta_star = np.array([0.5, -0.2, 0.0, 0.3, 1.0])
    coeffs = CoefficientPair(beta, beta - delta_star)
    cfg = TestConfig(beta0=beta)
    prep = PreparedDesign(d)
    q = ConfidenceQuery(delta_star)
    hits = 0
    M = 2000
    for r in range(M):
        Y = generate_response(d, coeffs, ErrorSpec.gaussian(), seed=50_000 + r)
        hits += confidence_region_membership(d, Y, beta, q, cfg, prep)[0]
    assert abs(hits / M - 0.95) <= 0.03


def test_membership_dimension_check():
    d, Y, beta = h0_data(40, 3, 20, seed=0)
    with pytest.raises(DimensionError):
        confidence_region_membership(d, Y, beta, np.zeros(2))
    with pytest.raises(DimensionError):
        ConfidenceQuery([0.0, np.nan])


def test_statistic_diverges_under_alternative():
    beta = sequence_beta(5)
    shift = np.array([0.0, 0.3, 0.0, -0.3, 0.0])
    medians = []
    for n in (100, 400, 1600):
        d = generate_design(n, 5, n // 2, seed=0)
        prep = PreparedDesign(d)
        cfg = TestConfig(beta0=beta)
        coeffs = CoefficientPair(beta, beta + shift)
        zs = [abs(test_changepoint(d, generate_response(d, coeffs, ErrorSpec.gaussian(), seed=r),
                                   cfg, prep).z_value) for r in range(100)]
        medians.append(np.median(zs))
    assert medians[0] < medians[1] < medians[2]
