import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import instances, random_data, random_params
from mvlmm import deviance
from mvlmm.deviance import LOG_2PI
from mvlmm.exceptions import NotPositiveDefinite
from mvlmm.model import FixedEffects, GroupedBivariateData, VarianceParams, theta_from_block
from mvlmm.simulator import default_config, simulate


def dense_normal_equations(sys):
    X = sys.X_sigma.toarray()
    Z = sys.Z_sigma_theta.toarray()
    Y = sys.Y_sigma
    P = sys.sigma_prod * np.linalg.inv(sys.sigma_u.dense("dimension"))
    A = np.block([[X.T @ X, X.T @ Z], [Z.T @ X, Z.T @ Z + P]])
    b = np.concatenate([X.T @ Y, Z.T @ Y])
    return A, b


@settings(max_examples=60, deadline=None)
@given(instances())
def test_loglik_matches_dense_density(inst):
    data, params, beta = inst
    ll = deviance.loglik(data, beta, params)
    oracle = deviance.direct_mvn_loglik(data, beta, params)
    assert abs(ll - oracle) <= 1e-8 * (1 + abs(oracle))


@settings(max_examples=30, deadline=None)
@given(instances())
def test_dense_oracle_two_paths_agree(inst):
    data, params, beta = inst
    a = deviance.direct_mvn_loglik(data, beta, params, "cholesky")
    b = deviance.direct_mvn_loglik(data, beta, params, "eigh")
    assert a == pytest.approx(b, rel=1e-10, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(instances())
def test_ml_and_reml_identities(inst):
    data, params, _ = inst
    sol = deviance.solve(data, params)
    ml = deviance.ml_deviance(data, params, sol)
    reml = deviance.reml_criterion(data, params, sol)
    s = params.sigma1 ** 2 * params.sigma2 ** 2
    assert reml - ml == pytest.approx(sol.logdet_RX_sq - data.p * math.log(s), abs=1e-10)
    ll = deviance.loglik(data, sol.beta_hat, params)
    assert ml == pytest.approx(-2 * ll - 2 * data.N * LOG_2PI, abs=1e-10 * (1 + abs(ml)))


@settings(max_examples=30, deadline=None)
@given(instances())
def test_normal_equations_hold(inst):
    data, params, _ = inst
    sys = deviance.build_scaled_system(data, params)
    sol = deviance.profiled_solve(sys)
    A, b = dense_normal_equations(sys)
    x = np.concatenate([sol.beta_hat, sol.mu])
    assert np.linalg.norm(A @ x - b) <= 1e-8 * (1 + np.linalg.norm(sys.Y_sigma)) * (1 + np.linalg.norm(A))
    assert sol.r_value >= 0


@settings(max_examples=30, deadline=None)
@given(instances())
def test_beta_hat_is_gls(inst):
    data, params, _ = inst
    np.testing.assert_allclose(deviance.solve(data, params).beta_hat,
                               deviance.gls_beta(data, params), rtol=1e-6, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(instances())
def test_reml_matches_gaussian_integral_over_beta(inst):
    data, params, _ = inst
    V = deviance.marginal_covariance(data, params)
    X, _ = deviance.dense_design(data)
    beta = deviance.gls_beta(data, params)
    ll = deviance.direct_mvn_loglik(data, beta, params)
    XtViX = X.T @ np.linalg.solve(V, X)
    # -2 log of the integral of the density over beta
    oracle = -2 * ll - data.p * LOG_2PI + np.linalg.slogdet(XtViX)[1]
    reml = deviance.reml_criterion(data, params)
    assert reml + (2 * data.N - data.p) * LOG_2PI == pytest.approx(oracle, rel=1e-9, abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(instances())
def test_logdet_l_matches_dense(inst):
    data, params, _ = inst
    sys = deviance.build_scaled_system(data, params)
    A, _ = dense_normal_equations(sys)
    p = data.p
    sol = deviance.profiled_solve(sys)
    assert sol.logdet_L_sq == pytest.approx(np.linalg.slogdet(A[p:, p:])[1], rel=1e-10, abs=1e-10)


def test_unit_scaling_leaves_data_unchanged(rng):
    data = random_data(rng, 3)
    params = VarianceParams([1, 0, 1], [1, 0, 1], np.zeros((2, 2)), 1.0, 1.0)
    sys = deviance.build_scaled_system(data, params)
    np.testing.assert_array_equal(sys.Y_sigma, np.concatenate([data.y1, data.y2]))
    np.testing.assert_array_equal(sys.Z_sigma_theta.toarray(),
                                  sla.block_diag(data.Z1.toarray(), data.Z2.toarray()))


def test_doubling_sigma1_scales_second_block(rng):
    data, p = random_data(rng, 3), random_params(rng)
    p2 = VarianceParams(p.theta1, p.theta2, p.rho, 2 * p.sigma1, p.sigma2)
    a = deviance.build_scaled_system(data, p).Y_sigma
    b = deviance.build_scaled_system(data, p2).Y_sigma
    np.testing.assert_array_equal(a[:data.N], b[:data.N])
    np.testing.assert_allclose(b[data.N:], 2 * a[data.N:], rtol=1e-15)


def test_cross_products_match_dense(rng):
    data = random_data(rng, 2, sizes=[3, 3])
    sys = deviance.build_scaled_system(data, random_params(rng))
    X = sys.X_sigma.toarray()
    np.testing.assert_allclose(sys.XtX, X.T @ X, rtol=1e-12, atol=1e-12)


def test_zero_response_gives_zero_solution(rng):
    d = random_data(rng, 3)
    z = GroupedBivariateData(np.zeros(d.N), np.zeros(d.N), d.X1, d.X2, d.z1, d.z2, d.group_index)
    sol = deviance.solve(z, random_params(rng))
    assert np.all(sol.beta_hat == 0) and np.all(sol.mu == 0) and sol.r_value == 0


def test_vanishing_random_effects_give_least_squares(rng):
    data = random_data(rng, 4)
    tiny = theta_from_block(1e-8 * np.eye(2))
    sol = deviance.solve(data, VarianceParams(tiny, tiny, np.zeros((2, 2)), 1.3, 0.7))
    ols1 = np.linalg.lstsq(data.X1, data.y1, rcond=None)[0]
    ols2 = np.linalg.lstsq(data.X2, data.y2, rcond=None)[0]
    np.testing.assert_allclose(sol.beta_hat, np.concatenate([ols1, ols2]), rtol=1e-6, atol=1e-8)


def test_small_instance_matches_dense_solve(rng):
    data = random_data(rng, 2, sizes=[4, 4], t1=1, t2=1)
    params = random_params(rng, 1, 1)
    sys = deviance.build_scaled_system(data, params)
    A, b = dense_normal_equations(sys)
    x = np.linalg.solve(A, b)
    sol = deviance.profiled_solve(sys)
    np.testing.assert_allclose(np.concatenate([sol.beta_hat, sol.mu]), x, rtol=1e-9, atol=1e-10)


def test_n6_instance_matches_oracle(rng):
    data = random_data(rng, 2, sizes=[3, 3], t1=1, t2=1)
    params = random_params(rng, 1, 1)
    beta = rng.normal(size=data.p)
    oracle = deviance.direct_mvn_loglik(data, beta, params)
    assert deviance.loglik(data, beta, params) == pytest.approx(oracle, rel=1e-8)
    ml = deviance.ml_deviance(data, params)
    best = deviance.direct_mvn_loglik(data, deviance.gls_beta(data, params), params)
    assert ml == pytest.approx(-2 * best - 2 * data.N * LOG_2PI, rel=1e-9)


def test_beta_hat_maximizes_loglik(small, rng):
    data, params = small
    bh = deviance.solve(data, params).beta_hat
    top = deviance.loglik(data, bh, params)
    for _ in range(100):
        assert deviance.loglik(data, bh + rng.normal(scale=0.5, size=bh.size), params) <= top


def test_translation_equivariance(small, rng):
    data, params = small
    beta = rng.normal(size=data.p)
    delta = rng.normal(size=data.p)
    shifted = GroupedBivariateData(
        data.y1 + data.X1 @ delta[:data.p1], data.y2 + data.X2 @ delta[data.p1:],
        data.X1, data.X2, data.z1, data.z2, data.group_index)
    assert deviance.loglik(shifted, beta + delta, params) == pytest.approx(
        deviance.loglik(data, beta, params), rel=1e-10)


def test_group_relabeling_invariance(rng):
    data, params = random_data(rng, 5), random_params(rng)
    perm = rng.permutation(5)
    relabeled = GroupedBivariateData(data.y1, data.y2, data.X1, data.X2, data.z1, data.z2,
                                     perm[data.group_index])
    assert deviance.ml_deviance(relabeled, params) == pytest.approx(
        deviance.ml_deviance(data, params), rel=1e-12)


def test_deviance_lower_at_truth_than_with_doubled_sigma():
    cfg = default_config(n_total=3000, n_groups=300, seed=11)
    data = simulate(cfg)
    p = cfg.true_params()
    doubled = VarianceParams(p.theta1 / 2, p.theta2 / 2, p.rho, 2 * p.sigma1, 2 * p.sigma2)
    assert deviance.ml_deviance(data, p) < deviance.ml_deviance(data, doubled)


def test_infeasible_rho_raises(small):
    data, params = small
    bad = VarianceParams(params.theta1, params.theta2, np.eye(2) * 1.01, 1.0, 1.0)
    with pytest.raises(NotPositiveDefinite):
        deviance.ml_deviance(data, bad)


def test_dense_oracle_without_random_effects(rng):
    data = random_data(rng, 3, t1=1, t2=1)
    params = VarianceParams([0.0], [0.0], [[0.0]], 1.5, 0.8)
    beta = rng.normal(size=data.p)
    e1 = data.y1 - data.X1 @ beta[:data.p1]
    e2 = data.y2 - data.X2 @ beta[data.p1:]

    def spherical(e, s):
        return -0.5 * (e.size * math.log(2 * math.pi * s * s) + e @ e / (s * s))

    assert deviance.direct_mvn_loglik(data, beta, params) == pytest.approx(
        spherical(e1, 1.5) + spherical(e2, 0.8), rel=1e-12)


def test_dense_covariance_block_structure(rng):
    data = random_data(rng, 3)
    params = VarianceParams([1, 0, 1], [1, 0, 1], np.zeros((2, 2)), 1.0, 1.0)
    Z1, Z2 = data.Z1.toarray(), data.Z2.toarray()
    expected = sla.block_diag(Z1 @ Z1.T + np.eye(data.N), Z2 @ Z2.T + np.eye(data.N))
    np.testing.assert_allclose(deviance.marginal_covariance(data, params), expected, atol=1e-13)


def test_dense_oracle_size_guard():
    cfg = default_config(n_total=300, n_groups=30)
    data = simulate(cfg)
    with pytest.raises(ValueError):
        deviance.direct_mvn_loglik(data, np.zeros(8), cfg.true_params())


def test_loglik_shape_check(small):
    data, params = small
    with pytest.raises(ValueError):
        deviance.loglik(data, FixedEffects(np.zeros(data.p1 + 1), np.zeros(data.p2)), params)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([1, 2]), st.sampled_from([1, 2]))
def test_single_response_deviance_matches_dense(seed, k, t):
    rng = np.random.default_rng(seed)
    kw = {"t1": t, "t2": 1} if k == 1 else {"t1": 1, "t2": t}
    data = random_data(rng, 4, **kw)
    block = np.tril(rng.normal(size=(t, t)))
    block[np.diag_indices(t)] = rng.uniform(0.3, 2.0, size=t)
    dev, sigma, beta, _ = deviance.single_response_solve(data, k, theta_from_block(block))
    y, X, Z = (data.y1, data.X1, data.Z1) if k == 1 else (data.y2, data.X2, data.Z2)
    Z = Z.toarray()
    lam = np.kron(np.eye(data.n_groups), block)
    V = sigma ** 2 * (Z @ lam @ lam.T @ Z.T + np.eye(data.N))
    Vi = np.linalg.inv(V)
    b = np.linalg.solve(X.T @ Vi @ X, X.T @ Vi @ y)
    e = y - X @ b
    ll = -0.5 * (data.N * LOG_2PI + np.linalg.slogdet(V)[1] + e @ Vi @ e)
    np.testing.assert_allclose(beta, b, rtol=1e-7, atol=1e-9)
    assert dev == pytest.approx(-2 * ll - data.N * LOG_2PI, rel=1e-9)
