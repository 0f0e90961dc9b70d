import numpy as np
import pytest

from mvlmm.exceptions import BuilderError
from mvlmm.model import assemble_gamma_bar
from mvlmm.simulator import (
    DEFAULT_GAMMA_BAR,
    GammaBarBuilder,
    SimConfig,
    build_gamma_bar,
    default_config,
    group_sizes,
    replication_rngs,
    simulate,
)


def test_default_values():
    cfg = default_config()
    assert cfg.beta1 == (50.67, -4.80, 14.00, 2.70)
    assert cfg.beta2 == (13.20, -2.80, 27.00, 1.70)
    assert (cfg.sigma1, cfg.sigma2) == (5.80, 7.60)
    assert cfg.beta1[3] == 2.70
    G = cfg.gamma_bar
    assert G[0, 0] == 27.77 and G[2, 2] == 97.81


def test_default_gamma_bar_is_positive_definite():
    G = np.asarray(DEFAULT_GAMMA_BAR)
    np.linalg.cholesky(G)
    # smallest eigenvalue of the published matrix
    assert np.linalg.eigvalsh(G).min() == pytest.approx(0.25547, abs=1e-5)


def test_true_params_reproduce_gamma_bar():
    cfg = default_config()
    np.testing.assert_allclose(assemble_gamma_bar(cfg.true_params()), cfg.gamma_bar, rtol=1e-12, atol=1e-12)


def test_overrides_keep_other_defaults():
    cfg = default_config(n_total=50, n_groups=5)
    assert cfg.beta1 == default_config().beta1 and cfg.n_total == 50


@pytest.mark.parametrize("kw", [
    {"n_total": 5, "n_groups": 6},
    {"n_groups": 0},
    {"sigma1": 0.0},
    {"beta1": (1.0, 2.0)},
    {"gamma_bar_true": ((1.0, 2.0, 0, 0), (2.0, 1.0, 0, 0), (0, 0, 1.0, 0), (0, 0, 0, 1.0))},
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SimConfig(**kw)


def test_builder_uncorrelated_is_diagonal():
    G = build_gamma_bar(GammaBarBuilder(1.0, 2.0, 3.0, 4.0))
    np.testing.assert_array_equal(G, np.diag([1.0, 4.0, 9.0, 16.0]))


def test_builder_singular_raises():
    with pytest.raises(BuilderError):
        build_gamma_bar(GammaBarBuilder(1, 1, 1, 1, rho=1.0, rho_eta=1.0, rho_tau=1.0))


def test_builder_recovers_published_scales():
    G = np.asarray(DEFAULT_GAMMA_BAR)
    eta1, eta2, tau1, tau2 = np.sqrt(np.diag(G))
    assert eta1 == pytest.approx(5.270, abs=1e-3)
    b = GammaBarBuilder(eta1, eta2, tau1, tau2, rho_eta=G[0, 1] / (eta1 * eta2),
                        rho_tau=G[2, 3] / (tau1 * tau2), rho=0.0)
    out = build_gamma_bar(b)
    np.testing.assert_allclose(np.diag(out), np.diag(G), rtol=1e-12)
    assert out[0, 1] == pytest.approx(G[0, 1]) and out[2, 3] == pytest.approx(G[2, 3])


def test_group_sizes_split():
    np.testing.assert_array_equal(group_sizes(10, 3), [4, 3, 3])
    np.testing.assert_array_equal(group_sizes(9, 3), [3, 3, 3])


def test_simulate_is_deterministic():
    cfg = default_config(n_total=200, n_groups=20, seed=5)
    a, b = simulate(cfg), simulate(cfg)
    for k in ("y1", "y2", "X1", "z2", "group_index"):
        assert getattr(a, k).tobytes() == getattr(b, k).tobytes()


def test_simulate_structure():
    cfg = default_config(n_total=203, n_groups=20, seed=1)
    d = simulate(cfg)
    assert d.N == 203 and d.n_groups == 20
    np.testing.assert_array_equal(d.group_sizes, group_sizes(203, 20))
    sex, nscore, age = d.X1[:, 1], d.X1[:, 2], d.X1[:, 3]
    for g in range(20):
        rows = d.group_index == g
        assert np.ptp(sex[rows]) == 0
        assert np.ptp(nscore[rows]) > 0 and np.ptp(age[rows]) > 0
    assert set(np.unique(sex)) <= {0.0, 1.0}
    assert nscore.min() >= 20 and nscore.max() <= 50
    assert age.min() >= 18 and age.max() <= 37
    np.testing.assert_array_equal(d.z1, d.X1[:, [0, 2]])


def test_noiseless_limit():
    cfg = default_config(n_total=60, n_groups=6)
    # a positive-definite but negligible covariance stands in for the zero matrix
    tiny = tuple(tuple(1e-300 * (i == j) for j in range(4)) for i in range(4))
    d = simulate(SimConfig(n_total=60, n_groups=6, gamma_bar_true=tiny, sigma1=1e-300, sigma2=1e-300))
    np.testing.assert_allclose(d.y1, d.X1 @ np.asarray(cfg.beta1), rtol=1e-14)
    np.testing.assert_allclose(d.y2, d.X2 @ np.asarray(cfg.beta2), rtol=1e-14)


def test_random_effects_covariance():
    cfg = default_config(n_total=15000, n_groups=1000, seed=12)
    _, gam = simulate(cfg, return_effects=True)
    G = cfg.gamma_bar
    n = gam.shape[0]
    emp = np.cov(gam, rowvar=False, bias=True)
    se = np.sqrt((np.outer(np.diag(G), np.diag(G)) + G ** 2) / n)
    assert np.all(np.abs(emp - G) <= 3 * se)


def test_replication_streams_are_independent():
    a = [r.random() for r in replication_rngs(3, 4)]
    b = [r.random() for r in replication_rngs(3, 4)]
    assert a == b and len(set(a)) == 4
