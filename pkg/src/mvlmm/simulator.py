"""Synthetic bivariate longitudinal data (weight/height growth design).

Each dimension uses the fixed covariates ``(1, sex, Nscore, age)`` and a random
intercept plus a random ``Nscore`` slope. Sex is drawn once per subject;
Nscore and age are drawn per observation.

Random streams are derived with :class:`numpy.random.SeedSequence`:
``SeedSequence(seed).spawn(k)[r]`` feeds replication ``r`` of a ``k``-run
experiment, so replications can be generated in any order or in parallel.
"""

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import BuilderError
from .model import GroupedBivariateData, checked_cholesky, params_from_gamma_bar

FIXED_NAMES = ("intercept", "sex", "Nscore", "age")
RANDOM_NAMES = ("intercept", "Nscore")

DEFAULT_BETA1 = (50.67, -4.80, 14.00, 2.70)
DEFAULT_BETA2 = (13.20, -2.80, 27.00, 1.70)
DEFAULT_GAMMA_BAR = (
    (27.77, 18.80, 41.70, 4.93),
    (18.80, 36.00, 47.47, 5.62),
    (41.70, 47.47, 97.81, 8.91),
    (4.93, 5.62, 8.91, 1.37),
)


@dataclass(frozen=True)
class SimConfig:
    n_total: int = 1000
    n_groups: int = 100
    beta1: tuple = DEFAULT_BETA1
    beta2: tuple = DEFAULT_BETA2
    gamma_bar_true: tuple = DEFAULT_GAMMA_BAR
    sigma1: float = 5.80
    sigma2: float = 7.60
    nscore_range: tuple = (20.0, 50.0)
    age_range: tuple = (18.0, 37.0)
    seed: int = 0

    def __post_init__(self):
        if not self.n_total >= self.n_groups >= 1:
            raise ValueError(f"need n_total >= n_groups >= 1, got ({self.n_total}, {self.n_groups})")
        if len(self.beta1) != 4 or len(self.beta2) != 4:
            raise ValueError("beta1 and beta2 must have 4 entries")
        G = np.asarray(self.gamma_bar_true, dtype=float)
        if G.shape != (4, 4) or not np.allclose(G, G.T):
            raise ValueError("gamma_bar_true must be a symmetric 4x4 matrix")
        checked_cholesky(G, exc=BuilderError)
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise ValueError("residual standard deviations must be positive")

    @property
    def gamma_bar(self):
        return np.asarray(self.gamma_bar_true, dtype=float)

    def true_params(self):
        """True ``VarianceParams`` implied by ``gamma_bar_true`` and the sigmas."""
        return params_from_gamma_bar(self.gamma_bar, self.sigma1, self.sigma2, 2)

    def truth(self):
        """Dictionary of true values, JSON serializable."""
        return {
            "beta1": list(self.beta1), "beta2": list(self.beta2),
            "sigma1": self.sigma1, "sigma2": self.sigma2,
            "gamma_bar": [list(r) for r in self.gamma_bar_true],
            "n_total": self.n_total, "n_groups": self.n_groups, "seed": self.seed,
        }


def default_config(**overrides):
    """Design values of the working data sets; keyword overrides are applied on top."""
    return replace(SimConfig(), **overrides)


@dataclass(frozen=True)
class GammaBarBuilder:
    """Scales and correlations generating a 4x4 random-effects covariance.

    ``eta`` are the dimension-1 scales (intercept, slope), ``tau`` the
    dimension-2 scales; ``rho_eta``/``rho_tau`` correlate terms within a
    dimension and ``rho`` correlates every pair across dimensions.
    """

    eta1: float
    eta2: float
    tau1: float
    tau2: float
    rho_eta: float = 0.0
    rho_tau: float = 0.0
    rho: float = 0.0


def build_gamma_bar(b):
    """Assemble and check the covariance described by a :class:`GammaBarBuilder`.

    Raises
    ------
    BuilderError
        If the matrix is not positive definite.
    """
    sd = np.array([b.eta1, b.eta2, b.tau1, b.tau2], dtype=float)
    corr = np.array([
        [1.0, b.rho_eta, b.rho, b.rho],
        [b.rho_eta, 1.0, b.rho, b.rho],
        [b.rho, b.rho, 1.0, b.rho_tau],
        [b.rho, b.rho, b.rho_tau, 1.0],
    ])
    G = corr * np.outer(sd, sd)
    G = 0.5 * (G + G.T)
    checked_cholesky(G, exc=BuilderError)
    return G


def group_sizes(n_total, n_groups):
    """Equal split; the first ``n_total % n_groups`` groups get one extra row."""
    base, extra = divmod(n_total, n_groups)
    sizes = np.full(n_groups, base, dtype=int)
    sizes[:extra] += 1
    return sizes


def simulate(config, rng=None, return_effects=False):
    """Draw one data set.

    ``rng`` defaults to ``np.random.default_rng(config.seed)``. With
    ``return_effects=True`` the per-group random effects ``(n_groups, 4)`` are
    also returned.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n, N = config.n_groups, config.n_total
    sizes = group_sizes(N, n)
    g = np.repeat(np.arange(n), sizes)
    sex = rng.integers(0, 2, size=n).astype(float)[g]
    nscore = rng.uniform(*config.nscore_range, size=N)
    age = rng.uniform(*config.age_range, size=N)
    X = np.column_stack([np.ones(N), sex, nscore, age])
    z = np.column_stack([np.ones(N), nscore])
    G = config.gamma_bar
    gam = rng.multivariate_normal(np.zeros(4), G, size=n, method="cholesky")
    e1 = rng.normal(0.0, config.sigma1, size=N)
    e2 = rng.normal(0.0, config.sigma2, size=N)
    y1 = X @ np.asarray(config.beta1) + np.einsum("nt,nt->n", z, gam[g, :2]) + e1
    y2 = X @ np.asarray(config.beta2) + np.einsum("nt,nt->n", z, gam[g, 2:]) + e2
    data = GroupedBivariateData(y1, y2, X, X, z, z, g)
    return (data, gam) if return_effects else data


def replication_rngs(seed, reps):
    """Independent generators for ``reps`` replications derived from ``seed``."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(reps)]
