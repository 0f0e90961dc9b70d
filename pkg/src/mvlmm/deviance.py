"""Profiled likelihood of the bivariate mixed model.

The marginal likelihood is evaluated through a penalized least-squares
problem. Writing ``s = sigma1^2 sigma2^2``, the rows of dimension 1 are scaled by
``sigma2`` and those of dimension 2 by ``sigma1``; the random-effects penalty
is ``s * inv(Sigma_u)``. The normal equations

    [ Xs'Xs     Xs'Zs         ] [beta]   [Xs'Ys]
    [ Zs'Xs     Zs'Zs + s Su^-1] [ mu ] = [Zs'Ys]

are solved with the block Cholesky factorization ``L L' = Zs'Zs + s Su^-1``,
``L RZX = Zs'Xs``, ``RX'RX = Xs'Xs - RZX'RZX``. After the group-major
permutation ``L`` is block diagonal, so only ``n_groups`` small blocks are
factored per evaluation.
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps

from .exceptions import NotPositiveDefinite, RankDeficientFixedDesign
from .model import (
    FixedEffects,
    assemble_sigma_u,
    build_lambda,
    checked_cholesky,
    group_to_dimension_perm,
    lambda_block,
    sigma_u_block,
    to_dimension_major,
)

LOG_2PI = math.log(2.0 * math.pi)
MAX_DENSE_ROWS = 500


def _blockdiag_batch(a, b):
    n = a.shape[0]
    out = np.zeros((n, a.shape[1] + b.shape[1], a.shape[2] + b.shape[2]))
    out[:, :a.shape[1], :a.shape[2]] = a
    out[:, a.shape[1]:, a.shape[2]:] = b
    return out


@dataclass(frozen=True, eq=False)
class ScaledSystem:
    """Scaled penalized least-squares system at one parameter point.

    Only group-wise cross-products are stored. ``Y_sigma``, ``X_sigma`` and
    ``Z_sigma_theta`` are materialized on request for inspection and tests.
    """

    data: object
    params: object
    sigma_u: object
    sigma_prod: float
    ZtZ: np.ndarray   # (n, k, k)
    ZtX: np.ndarray   # (n, k, p)
    ZtY: np.ndarray   # (n, k)
    XtX: np.ndarray   # (p, p)
    XtY: np.ndarray   # (p,)

    @property
    def scale1(self):
        # multiplier applied to dimension-1 rows
        return self.params.sigma2

    @property
    def scale2(self):
        return self.params.sigma1

    @cached_property
    def Y_sigma(self):
        d = self.data
        return np.concatenate([self.scale1 * d.y1, self.scale2 * d.y2])

    @cached_property
    def X_sigma(self):
        d = self.data
        return sps.block_diag([self.scale1 * d.X1, self.scale2 * d.X2], format="csr")

    @cached_property
    def Z_sigma_theta(self):
        d, prm = self.data, self.params
        z1 = self.scale1 * d.Z1 @ build_lambda(prm.theta1, prm.t1, d.n_groups)
        z2 = self.scale2 * d.Z2 @ build_lambda(prm.theta2, prm.t2, d.n_groups)
        return sps.block_diag([z1, z2], format="csr")

    @property
    def penalty_block(self):
        """Per-group block of ``s * inv(Sigma_u)`` in group-major order."""
        return self.sigma_prod * self.sigma_u.inverse_block


def build_scaled_system(data, params):
    """Scale the data by the residual standard deviations and random-effect factors.

    Raises
    ------
    NotPositiveDefinite
        Propagated from :func:`~mvlmm.model.assemble_sigma_u`.
    """
    params.check(data)
    st = data.stats
    sigma_u = assemble_sigma_u(params, data.n_groups)
    a = params.sigma2 ** 2
    b = params.sigma1 ** 2
    l1, l2 = params.lambda1, params.lambda2
    ZtZ = _blockdiag_batch(a * (l1.T @ st.ZtZ1 @ l1), b * (l2.T @ st.ZtZ2 @ l2))
    ZtX = _blockdiag_batch(a * (l1.T @ st.ZtX1), b * (l2.T @ st.ZtX2))
    ZtY = np.hstack([a * (st.Zty1 @ l1), b * (st.Zty2 @ l2)])
    XtX = sla.block_diag(a * st.XtX1, b * st.XtX2)
    XtY = np.concatenate([a * st.Xty1, b * st.Xty2])
    return ScaledSystem(data, params, sigma_u, a * b, ZtZ, ZtX, ZtY, XtX, XtY)


@dataclass(frozen=True, eq=False)
class ProfiledSolution:
    """Conditional estimates and log-determinants at one parameter point.

    ``mu`` is in dimension-major order; ``mu_groups`` holds the same values as
    an ``(n_groups, t1 + t2)`` array.
    """

    beta_hat: np.ndarray
    mu: np.ndarray
    mu_groups: np.ndarray
    r_value: float
    logdet_L_sq: float
    logdet_RX_sq: float
    R_X: np.ndarray
    L_blocks: np.ndarray
    sigma_prod: float
    log_det_sigma_u: float


def _factor(ZtZ, ZtX, ZtY, XtX, XtY, penalty):
    """Block Cholesky solve shared by the bivariate and single-response systems."""
    C = ZtZ + penalty
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError as err:
        raise NotPositiveDefinite("random-effects block not positive definite") from err
    rhs = np.concatenate([ZtX, ZtY[:, :, None]], axis=2)
    sol = np.linalg.solve(L, rhs)
    RZX, cu = sol[:, :, :-1], sol[:, :, -1]
    schur = XtX - np.einsum("gkp,gkr->pr", RZX, RZX)
    schur = 0.5 * (schur + schur.T)
    Lx = checked_cholesky(schur, exc=RankDeficientFixedDesign)
    cb = XtY - np.einsum("gkp,gk->p", RZX, cu)
    beta = sla.cho_solve((Lx, True), cb)
    w = cu - RZX @ beta
    mu = np.linalg.solve(np.swapaxes(L, 1, 2), w[:, :, None])[:, :, 0]
    logdet_L = 2.0 * float(np.sum(np.log(np.diagonal(L, axis1=1, axis2=2))))
    logdet_RX = 2.0 * float(np.sum(np.log(np.diag(Lx))))
    return beta, mu, L, Lx.T, logdet_L, logdet_RX


def _dimension_residuals(data, params, beta, mu_groups):
    """Unscaled residuals ``y_k - X_k b_k - Z_k L_k mu_k`` for both dimensions."""
    p1, t1 = data.p1, params.t1
    g = data.group_index
    gam1 = mu_groups[:, :t1] @ params.lambda1.T
    gam2 = mu_groups[:, t1:] @ params.lambda2.T
    e1 = data.y1 - data.X1 @ beta[:p1] - np.einsum("nt,nt->n", data.z1, gam1[g])
    e2 = data.y2 - data.X2 @ beta[p1:] - np.einsum("nt,nt->n", data.z2, gam2[g])
    return e1, e2


def profiled_solve(sys):
    """Solve the normal equations of a :class:`ScaledSystem`.

    Raises
    ------
    RankDeficientFixedDesign
        If ``Xs'Xs - RZX'RZX`` is not numerically positive definite.
    """
    beta, mu_g, L, RX, ld_L, ld_RX = _factor(
        sys.ZtZ, sys.ZtX, sys.ZtY, sys.XtX, sys.XtY, sys.penalty_block)
    d, prm = sys.data, sys.params
    e1, e2 = _dimension_residuals(d, prm, beta, mu_g)
    whitened = mu_g @ sys.sigma_u.inverse_factor_block.T
    r = (sys.scale1 ** 2 * float(e1 @ e1) + sys.scale2 ** 2 * float(e2 @ e2)
         + sys.sigma_prod * float(np.sum(whitened * whitened)))
    return ProfiledSolution(
        beta_hat=beta, mu=to_dimension_major(mu_g, prm.t1), mu_groups=mu_g,
        r_value=r, logdet_L_sq=ld_L, logdet_RX_sq=ld_RX, R_X=RX, L_blocks=L,
        sigma_prod=sys.sigma_prod, log_det_sigma_u=sys.sigma_u.log_det)


def solve(data, params):
    """Shorthand for ``profiled_solve(build_scaled_system(data, params))``."""
    return profiled_solve(build_scaled_system(data, params))


def _ml_from_solution(sol, N, q):
    s = sol.sigma_prod
    return (sol.r_value / s + (N - q) * math.log(s) + sol.log_det_sigma_u + sol.logdet_L_sq)


def loglik(data, beta, params):
    """Log-likelihood of ``(beta, params)``, including the ``-N log(2 pi)`` constant."""
    if not isinstance(beta, FixedEffects):
        beta = FixedEffects.from_vector(beta, data.p1)
    beta.check(data)
    sol = solve(data, params)
    delta = sol.R_X @ (beta.vector - sol.beta_hat)
    dev = _ml_from_solution(sol, data.N, data.q) + float(delta @ delta) / sol.sigma_prod
    return -0.5 * dev - data.N * LOG_2PI


def ml_deviance(data, params, solution=None):
    """Profiled ML deviance (no ``2 pi`` constant).

    ``r / s + (N - q) log s + log|Sigma_u| + log|L|^2`` with ``s = sigma1^2 sigma2^2``.
    """
    sol = solve(data, params) if solution is None else solution
    return _ml_from_solution(sol, data.N, data.q)


def reml_criterion(data, params, solution=None):
    """REML criterion: ``r / s + (N - p - q) log s + log|Sigma_u| + log|L|^2 + log|RX|^2``."""
    sol = solve(data, params) if solution is None else solution
    return (_ml_from_solution(sol, data.N, data.q)
            - data.p * math.log(sol.sigma_prod) + sol.logdet_RX_sq)


def dense_design(data):
    """Dense stacked fixed and random designs (dimension-major), for small problems."""
    X = sla.block_diag(data.X1, data.X2)
    Z = sla.block_diag(data.Z1.toarray(), data.Z2.toarray())
    return X, Z


def marginal_covariance(data, params):
    """Dense ``2N x 2N`` covariance of the stacked responses."""
    n = data.n_groups
    lam = sla.block_diag(build_lambda(params.theta1, params.t1, n).toarray(),
                         build_lambda(params.theta2, params.t2, n).toarray())
    # raw block so the oracle also covers boundary rho values
    perm = group_to_dimension_perm(n, params.t1, params.t2)
    su = np.kron(np.eye(n), sigma_u_block(params))[np.ix_(perm, perm)]
    X, Z = dense_design(data)
    G = lam @ su @ lam.T
    R = np.diag(np.concatenate([np.full(data.N, params.sigma1 ** 2),
                                np.full(data.N, params.sigma2 ** 2)]))
    return Z @ G @ Z.T + R


def direct_mvn_loglik(data, beta, params, method="cholesky"):
    """Gaussian log-density of the stacked responses from the dense covariance.

    O(N^3) reference implementation for testing; refuses problems with more
    than 500 stacked rows. ``method`` selects a Cholesky or an eigendecomposition
    route to the log-determinant and quadratic form.
    """
    if 2 * data.N > MAX_DENSE_ROWS:
        raise ValueError(f"dense oracle limited to {MAX_DENSE_ROWS} stacked rows, got {2 * data.N}")
    if not isinstance(beta, FixedEffects):
        beta = FixedEffects.from_vector(beta, data.p1)
    V = marginal_covariance(data, params)
    X, _ = dense_design(data)
    resid = np.concatenate([data.y1, data.y2]) - X @ beta.vector
    if method == "cholesky":
        c = np.linalg.cholesky(V)
        z = sla.solve_triangular(c, resid, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(c)))
        quad = z @ z
    elif method == "eigh":
        w, U = np.linalg.eigh(V)
        proj = U.T @ resid
        logdet = np.sum(np.log(w))
        quad = np.sum(proj * proj / w)
    else:
        raise ValueError(f"unknown method {method!r}")
    return -0.5 * (2 * data.N * LOG_2PI + logdet + quad)


def gls_beta(data, params):
    """Generalized least-squares fixed effects from the dense marginal covariance."""
    V = marginal_covariance(data, params)
    X, _ = dense_design(data)
    y = np.concatenate([data.y1, data.y2])
    c = sla.cho_factor(V, lower=True)
    ViX = sla.cho_solve(c, X)
    return np.linalg.solve(X.T @ ViX, ViX.T @ y)


# --- single-response specialization ---------------------------------------

def single_response_solve(data, k, theta):
    """Profiled fit of dimension ``k`` alone at relative factor ``theta``.

    With one dimension the scaling reduces to unit weights and the penalty to
    the identity. Returns ``(deviance, sigma_hat, beta_hat, mu_groups)``, where
    the residual variance is profiled out (``sigma^2 = r / N``) and the
    deviance omits the ``2 pi`` constant.
    """
    st = data.stats
    if k == 1:
        ZtZ, ZtX, Zty, XtX, Xty, t = st.ZtZ1, st.ZtX1, st.Zty1, st.XtX1, st.Xty1, data.t1
        y, X, z = data.y1, data.X1, data.z1
    else:
        ZtZ, ZtX, Zty, XtX, Xty, t = st.ZtZ2, st.ZtX2, st.Zty2, st.XtX2, st.Xty2, data.t2
        y, X, z = data.y2, data.X2, data.z2
    lam = lambda_block(theta, t)
    beta, mu_g, _, _, ld_L, _ = _factor(
        lam.T @ ZtZ @ lam, lam.T @ ZtX, Zty @ lam, XtX, Xty, np.eye(t))
    gam = mu_g @ lam.T
    e = y - X @ beta - np.einsum("nt,nt->n", z, gam[data.group_index])
    r = float(e @ e) + float(np.sum(mu_g * mu_g))
    N = data.N
    sigma2 = r / N
    dev = N + N * math.log(sigma2) + ld_L
    return dev, math.sqrt(sigma2), beta, mu_g

