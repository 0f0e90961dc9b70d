"""Complete-data EM for the bivariate mixed model (comparison baseline).

The random effects are treated as missing data and the per-group covariance
``G`` (the 4x4 ``gamma_bar`` in the working design) is updated directly, without
a Cholesky parameterization. For group ``i`` with stacked design ``Zi``,
residual covariance ``Ri = diag(s1^2 I, s2^2 I)`` and ``Ai = Zi' Ri^-1 Zi``::

    Ci = (I + G Ai)^-1 G
    mi = Ci Zi' Ri^-1 (yi - Xi beta)

The M-step sets ``beta_k`` by least squares on ``y_k - Z_k m_k``,
``G = mean(mi mi' + Ci)`` and ``s_k^2`` to the expected mean squared residual.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import deviance
from .exceptions import EmNumericalError, NotPositiveDefinite
from .fitter import ML, FitResult
from .model import FixedEffects, params_from_gamma_bar


@dataclass(frozen=True)
class EmOptions:
    tol: float = 1e-8
    max_iter: int = 2000

    def __post_init__(self):
        if not (self.tol > 0 and self.max_iter > 0):
            raise ValueError("tol and max_iter must be positive")


@dataclass(frozen=True, eq=False)
class EmState:
    beta: FixedEffects
    gamma_bar: np.ndarray
    sigma1: float
    sigma2: float


def _group_terms(data, state):
    st = data.stats
    t1 = data.t1
    v1, v2 = state.sigma1 ** 2, state.sigma2 ** 2
    n = data.n_groups
    k = data.t1 + data.t2
    A = np.zeros((n, k, k))
    A[:, :t1, :t1] = st.ZtZ1 / v1
    A[:, t1:, t1:] = st.ZtZ2 / v2
    b = np.hstack([
        (st.Zty1 - st.ZtX1 @ state.beta.beta1) / v1,
        (st.Zty2 - st.ZtX2 @ state.beta.beta2) / v2,
    ])
    return A, b


def e_step(data, state):
    """Conditional means ``(n_groups, k)`` and covariances ``(n_groups, k, k)`` of the effects."""
    G = np.asarray(state.gamma_bar, dtype=float)
    A, b = _group_terms(data, state)
    k = G.shape[0]
    M = np.eye(k) + G @ A
    try:
        C = np.linalg.solve(M, np.broadcast_to(G, M.shape))
    except np.linalg.LinAlgError as err:
        raise EmNumericalError("singular per-group system in the E-step") from err
    C = 0.5 * (C + np.swapaxes(C, 1, 2))
    m = np.einsum("gij,gj->gi", C, b)
    if not (np.all(np.isfinite(C)) and np.all(np.isfinite(m))):
        raise EmNumericalError("non-finite conditional moments")
    return m, C


def m_step(data, m, C):
    st = data.stats
    t1 = data.t1
    g = data.group_index
    m1, m2 = m[:, :t1], m[:, t1:]
    beta1 = np.linalg.solve(st.XtX1, st.Xty1 - np.einsum("gtp,gt->p", st.ZtX1, m1))
    beta2 = np.linalg.solve(st.XtX2, st.Xty2 - np.einsum("gtp,gt->p", st.ZtX2, m2))
    G = np.mean(np.einsum("gi,gj->gij", m, m) + C, axis=0)
    e1 = data.y1 - data.X1 @ beta1 - np.einsum("nt,nt->n", data.z1, m1[g])
    e2 = data.y2 - data.X2 @ beta2 - np.einsum("nt,nt->n", data.z2, m2[g])
    tr1 = np.einsum("gij,gji->", st.ZtZ1, C[:, :t1, :t1])
    tr2 = np.einsum("gij,gji->", st.ZtZ2, C[:, t1:, t1:])
    s1 = math.sqrt((e1 @ e1 + tr1) / data.N)
    s2 = math.sqrt((e2 @ e2 + tr2) / data.N)
    return EmState(FixedEffects(beta1, beta2), 0.5 * (G + G.T), s1, s2)


def gamma_loglik(data, state):
    """Marginal log-likelihood parameterized directly by the per-group covariance.

    Uses the determinant lemma and the Woodbury identity group by group, so it
    also works when ``gamma_bar`` is singular.
    """
    G = np.asarray(state.gamma_bar, dtype=float)
    A, b = _group_terms(data, state)
    k = G.shape[0]
    M = np.eye(k) + G @ A
    sign, logdet_M = np.linalg.slogdet(M)
    if np.any(sign <= 0):
        raise EmNumericalError("marginal covariance is not positive definite")
    v1, v2 = state.sigma1 ** 2, state.sigma2 ** 2
    e1 = data.y1 - data.X1 @ state.beta.beta1
    e2 = data.y2 - data.X2 @ state.beta.beta2
    quad = e1 @ e1 / v1 + e2 @ e2 / v2
    quad -= np.einsum("gi,gi->", b, np.linalg.solve(M, np.einsum("ij,gj->gi", G, b)[:, :, None])[:, :, 0])
    logdet = data.N * (math.log(v1) + math.log(v2)) + np.sum(logdet_M)
    return -0.5 * (2 * data.N * deviance.LOG_2PI + logdet + quad)


def state_loglik(data, state):
    """Marginal log-likelihood of an EM state.

    Goes through the profiled engine whenever ``gamma_bar`` maps back to
    ``(theta, rho, sigma)`` and falls back to :func:`gamma_loglik` otherwise.
    """
    try:
        params = params_from_gamma_bar(state.gamma_bar, state.sigma1, state.sigma2, data.t1)
    except NotPositiveDefinite:
        return gamma_loglik(data, state)
    return deviance.loglik(data, state.beta, params)


def em_sweep(data, state):
    m, C = e_step(data, state)
    return m_step(data, m, C)


def em_fit(data, init, opts=None):
    """Run EM from ``init`` until the relative log-likelihood change is at most ``opts.tol``.

    Parameters
    ----------
    data : GroupedBivariateData
    init : EmState
        Starting ``beta``, ``gamma_bar`` (positive definite) and residual sds.
    opts : EmOptions, optional

    Returns
    -------
    FitResult
        ``iterations`` is the number of sweeps and ``trace`` the log-likelihood
        after each sweep. ``params`` is ``None`` if the final covariance could
        not be mapped to ``(theta, rho, sigma)``; ``gamma_bar`` is always set.
    """
    opts = EmOptions() if opts is None else opts
    G0 = np.asarray(init.gamma_bar, dtype=float)
    try:
        np.linalg.cholesky(G0)
    except np.linalg.LinAlgError as err:
        raise ValueError("initial gamma_bar must be positive definite") from err
    state = init
    prev = state_loglik(data, state)
    trace = []
    converged = False
    for _ in range(opts.max_iter):
        state = em_sweep(data, state)
        cur = state_loglik(data, state)
        trace.append(cur)
        if abs(cur - prev) <= opts.tol * abs(prev):
            converged = True
            break
        prev = cur
    return _em_result(data, state, init, trace, converged)


def _em_result(data, state, init, trace, converged):
    init_vec = np.concatenate([init.beta.vector, np.asarray(init.gamma_bar).ravel(),
                               [init.sigma1, init.sigma2]])
    try:
        params = params_from_gamma_bar(state.gamma_bar, state.sigma1, state.sigma2, data.t1)
        sol = deviance.solve(data, params)
        value = deviance.ml_deviance(data, params, sol)
        mu, message = sol.mu, ""
    except NotPositiveDefinite:
        params, mu = None, np.full(data.q, np.nan)
        value = -2.0 * gamma_loglik(data, state) - 2 * data.N * deviance.LOG_2PI
        message = "gamma_bar has no (theta, rho, sigma) representation"
    return FitResult(
        params=params, beta=state.beta, mu=mu, gamma_bar=state.gamma_bar,
        criterion_value=value, iterations=len(trace), converged=converged,
        init_used=init_vec, criterion=ML, sigma1=state.sigma1, sigma2=state.sigma2,
        trace=tuple(trace), message=message)


def marginal_loglik_trace(result):
    """Per-sweep marginal log-likelihood of an EM run."""
    return np.asarray(result.trace)
