"""Data containers and covariance assembly for the bivariate mixed model.

Two responses are observed on every row::

    y1 = X1 b1 + Z1 L1 u1 + e1,    e1 ~ N(0, s1^2 I)
    y2 = X2 b2 + Z2 L2 u2 + e2,    e2 ~ N(0, s2^2 I)

with ``u = (u1, u2) ~ N(0, Sigma_u)``. ``L1``/``L2`` are block diagonal with one
lower-triangular ``t_k x t_k`` block per group, generated by ``theta_k``.
Per group, ``Sigma_u`` has the block ``[[s1^2 I, s1 s2 rho], [s1 s2 rho', s2^2 I]]``.

Random-effect coordinates are kept group-major internally (``u1_i, u2_i`` for
each group ``i``) so every covariance factor is block diagonal with identical
blocks; dimension-major order (all of ``u1`` then all of ``u2``) is used at
API boundaries.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sps

from .exceptions import DataError, NotPositiveDefinite, ParameterShapeError

PIVOT_TOL = 1e-12


def n_theta(t):
    """Number of free entries in a ``t x t`` lower-triangular factor."""
    return t * (t + 1) // 2


def _lower_indices(t):
    # column-major order of the lower triangle
    cols, rows = np.triu_indices(t)
    return rows, cols


def checked_cholesky(a, tol=PIVOT_TOL, exc=NotPositiveDefinite):
    """Lower Cholesky factor of a small symmetric matrix with a pivot test.

    A pivot ``<= tol * max(diag(a))`` raises ``exc`` carrying the pivot index.
    """
    a = np.asarray(a, dtype=float)
    k = a.shape[0]
    scale = max(float(np.max(np.diag(a))), 0.0) if k else 0.0
    floor = tol * scale
    L = np.zeros_like(a)
    for j in range(k):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if not np.isfinite(d) or d <= floor:
            raise exc(f"non-positive pivot {d:.3g} at index {j}", pivot=j)
        L[j, j] = np.sqrt(d)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


@dataclass(frozen=True, eq=False)
class GroupedBivariateData:
    """Long-format bivariate responses with a single grouping factor.

    Parameters
    ----------
    y1, y2 : ndarray, shape (N,)
        Responses; both are observed on every row.
    X1, X2 : ndarray, shape (N, p_k)
        Fixed-effects designs. Must have full column rank.
    z1, z2 : ndarray, shape (N, t_k)
        Per-row random-effects covariates. The sparse ``N x n*t_k`` design
        ``Z_k`` places row ``r`` of ``z_k`` in the columns of its group.
    group_index : ndarray of int, shape (N,)
        Group of each row, coded ``0..n_groups-1``.
    """

    y1: np.ndarray
    y2: np.ndarray
    X1: np.ndarray
    X2: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    group_index: np.ndarray
    group_labels: tuple = field(default=None)

    def __post_init__(self):
        conv = {
            "y1": np.asarray(self.y1, dtype=float).ravel(),
            "y2": np.asarray(self.y2, dtype=float).ravel(),
            "X1": np.atleast_2d(np.asarray(self.X1, dtype=float)),
            "X2": np.atleast_2d(np.asarray(self.X2, dtype=float)),
            "z1": np.asarray(self.z1, dtype=float),
            "z2": np.asarray(self.z2, dtype=float),
            "group_index": np.asarray(self.group_index, dtype=np.intp).ravel(),
        }
        for k in ("z1", "z2"):
            if conv[k].ndim == 1:
                conv[k] = conv[k][:, None]
        for k, v in conv.items():
            v.setflags(write=False)
            object.__setattr__(self, k, v)
        self._validate()
        if self.group_labels is None:
            object.__setattr__(self, "group_labels", tuple(range(self.n_groups)))

    def _validate(self):
        N = self.y1.shape[0]
        for name in ("y2", "X1", "X2", "z1", "z2", "group_index"):
            if getattr(self, name).shape[0] != N:
                raise DataError(f"{name} has {getattr(self, name).shape[0]} rows, expected {N}")
        if N == 0:
            raise DataError("no observations")
        for name in ("y1", "y2", "X1", "X2", "z1", "z2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"{name} contains non-finite values")
        if self.t1 == 0 or self.t2 == 0:
            raise DataError("each dimension needs at least one random-effect term")
        if self.p1 == 0 or self.p2 == 0:
            raise DataError("each dimension needs at least one fixed-effect column")
        g = self.group_index
        if g.min() < 0:
            raise DataError("group_index must be non-negative")
        counts = np.bincount(g)
        if np.any(counts == 0):
            raise DataError("group codes must be contiguous 0..n_groups-1 with no empty group")
        for name in ("X1", "X2"):
            X = getattr(self, name)
            if np.linalg.matrix_rank(X) < X.shape[1]:
                raise DataError(f"{name} is rank deficient")

    @classmethod
    def from_groups(cls, y1, y2, X1, X2, z1, z2, groups):
        """Build from arbitrary group labels, coded in order of first appearance."""
        groups = np.asarray(groups)
        labels, first, codes = np.unique(groups, return_index=True, return_inverse=True)
        order = np.argsort(first)
        remap = np.empty_like(order)
        remap[order] = np.arange(order.size)
        return cls(y1, y2, X1, X2, z1, z2, remap[codes.ravel()],
                   group_labels=tuple(labels[order].tolist()))

    @property
    def N(self):
        return self.y1.shape[0]

    @property
    def p1(self):
        return self.X1.shape[1]

    @property
    def p2(self):
        return self.X2.shape[1]

    @property
    def p(self):
        return self.p1 + self.p2

    @property
    def t1(self):
        return self.z1.shape[1]

    @property
    def t2(self):
        return self.z2.shape[1]

    @cached_property
    def group_sizes(self):
        return np.bincount(self.group_index)

    @property
    def n_groups(self):
        return self.group_sizes.shape[0]

    @property
    def q1(self):
        return self.n_groups * self.t1

    @property
    def q2(self):
        return self.n_groups * self.t2

    @property
    def q(self):
        return self.q1 + self.q2

    def _sparse_z(self, z):
        t = z.shape[1]
        rows = np.repeat(np.arange(self.N), t)
        cols = (self.group_index[:, None] * t + np.arange(t)).ravel()
        return sps.csr_matrix((z.ravel(), (rows, cols)), shape=(self.N, self.n_groups * t))

    @property
    def Z1(self):
        """Sparse ``N x q1`` random-effects design of dimension 1."""
        return self._sparse_z(self.z1)

    @property
    def Z2(self):
        return self._sparse_z(self.z2)

    @cached_property
    def stats(self):
        """Per-group cross-products reused by every likelihood evaluation."""
        return _CrossProducts.from_data(self)


@dataclass(frozen=True, eq=False)
class _CrossProducts:
    # per-group blocks are indexed by group along axis 0
    ZtZ1: np.ndarray
    ZtZ2: np.ndarray
    ZtX1: np.ndarray
    ZtX2: np.ndarray
    Zty1: np.ndarray
    Zty2: np.ndarray
    XtX1: np.ndarray
    XtX2: np.ndarray
    Xty1: np.ndarray
    Xty2: np.ndarray
    yty1: float
    yty2: float

    @classmethod
    def from_data(cls, d):
        n, g = d.n_groups, d.group_index

        def per_group(a, b):
            out = np.zeros((n, a.shape[1], b.shape[1]))
            np.add.at(out, g, a[:, :, None] * b[:, None, :])
            return out

        return cls(
            ZtZ1=per_group(d.z1, d.z1), ZtZ2=per_group(d.z2, d.z2),
            ZtX1=per_group(d.z1, d.X1), ZtX2=per_group(d.z2, d.X2),
            Zty1=per_group(d.z1, d.y1[:, None])[:, :, 0],
            Zty2=per_group(d.z2, d.y2[:, None])[:, :, 0],
            XtX1=d.X1.T @ d.X1, XtX2=d.X2.T @ d.X2,
            Xty1=d.X1.T @ d.y1, Xty2=d.X2.T @ d.y2,
            yty1=float(d.y1 @ d.y1), yty2=float(d.y2 @ d.y2),
        )


@dataclass(frozen=True, eq=False)
class FixedEffects:
    beta1: np.ndarray
    beta2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta1", np.asarray(self.beta1, dtype=float).ravel())
        object.__setattr__(self, "beta2", np.asarray(self.beta2, dtype=float).ravel())

    @classmethod
    def from_vector(cls, beta, p1):
        beta = np.asarray(beta, dtype=float)
        return cls(beta[:p1], beta[p1:])

    @property
    def vector(self):
        return np.concatenate([self.beta1, self.beta2])

    def check(self, data):
        if self.beta1.size != data.p1 or self.beta2.size != data.p2:
            raise ParameterShapeError(
                f"fixed effects of length ({self.beta1.size}, {self.beta2.size}) "
                f"do not match designs ({data.p1}, {data.p2})")


@dataclass(frozen=True, eq=False)
class VarianceParams:
    """Variance parameters ``(theta1, theta2, rho, sigma1, sigma2)``.

    ``theta_k`` fills the per-group lower-triangular factor column by column;
    ``rho`` is the ``t1 x t2`` cross-correlation block shared by all groups.
    """

    theta1: np.ndarray
    theta2: np.ndarray
    rho: np.ndarray
    sigma1: float
    sigma2: float

    def __post_init__(self):
        rho = np.atleast_2d(np.asarray(self.rho, dtype=float))
        th1 = np.atleast_1d(np.asarray(self.theta1, dtype=float)).ravel()
        th2 = np.atleast_1d(np.asarray(self.theta2, dtype=float)).ravel()
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "theta1", th1)
        object.__setattr__(self, "theta2", th2)
        object.__setattr__(self, "sigma1", float(self.sigma1))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        t1, t2 = rho.shape
        if th1.size != n_theta(t1) or th2.size != n_theta(t2):
            raise ParameterShapeError(
                f"theta lengths ({th1.size}, {th2.size}) do not match rho shape {rho.shape}")
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ParameterShapeError("sigma1 and sigma2 must be positive")

    @property
    def t1(self):
        return self.rho.shape[0]

    @property
    def t2(self):
        return self.rho.shape[1]

    @property
    def lambda1(self):
        return lambda_block(self.theta1, self.t1)

    @property
    def lambda2(self):
        return lambda_block(self.theta2, self.t2)

    def check(self, data):
        if (self.t1, self.t2) != (data.t1, data.t2):
            raise ParameterShapeError(
                f"parameters built for t=({self.t1}, {self.t2}), data has ({data.t1}, {data.t2})")

    def __eq__(self, other):
        if not isinstance(other, VarianceParams):
            return NotImplemented
        return (np.array_equal(self.theta1, other.theta1)
                and np.array_equal(self.theta2, other.theta2)
                and np.array_equal(self.rho, other.rho)
                and self.sigma1 == other.sigma1 and self.sigma2 == other.sigma2)

    __hash__ = None


def lambda_block(theta, t):
    """Per-group ``t x t`` lower-triangular relative covariance factor."""
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != n_theta(t):
        raise ParameterShapeError(f"theta has length {theta.size}, expected {n_theta(t)} for t={t}")
    block = np.zeros((t, t))
    block[_lower_indices(t)] = theta
    return block


def theta_from_block(block):
    """Inverse of :func:`lambda_block`."""
    block = np.asarray(block, dtype=float)
    return block[_lower_indices(block.shape[0])].copy()


def build_lambda(theta, t, n_groups):
    """Block-diagonal ``q x q`` factor with ``n_groups`` copies of the per-group block."""
    return sps.kron(sps.identity(n_groups, format="csr"), lambda_block(theta, t), format="csr")


@dataclass(frozen=True, eq=False)
class SigmaU:
    """Covariance of the spherical random effects, stored as one per-group block.

    ``inverse_factor_block`` is the upper-triangular ``S`` with
    ``S.T @ S == inv(per_group_block)``.
    """

    per_group_block: np.ndarray
    n_groups: int
    log_det: float
    inverse_factor_block: np.ndarray
    chol_block: np.ndarray
    t1: int
    t2: int

    @property
    def inverse_block(self):
        S = self.inverse_factor_block
        return S.T @ S

    def dense(self, order="dimension"):
        """Full ``q x q`` matrix, in ``"dimension"``- or ``"group"``-major order."""
        full = sps.kron(sps.identity(self.n_groups), self.per_group_block).toarray()
        if order == "group":
            return full
        perm = group_to_dimension_perm(self.n_groups, self.t1, self.t2)
        return full[np.ix_(perm, perm)]


def group_to_dimension_perm(n_groups, t1, t2):
    """Index array ``perm`` with ``dim_major = group_major[perm]``."""
    k = t1 + t2
    base = np.arange(n_groups)[:, None] * k
    return np.concatenate([(base + np.arange(t1)).ravel(), (base + t1 + np.arange(t2)).ravel()])


def to_dimension_major(per_group, t1):
    """Flatten an ``(n_groups, t1 + t2)`` array into dimension-major order."""
    per_group = np.asarray(per_group)
    return np.concatenate([per_group[:, :t1].ravel(), per_group[:, t1:].ravel()])


def to_group_major(vec, n_groups, t1, t2):
    """Inverse of :func:`to_dimension_major`, returning shape ``(n_groups, t1 + t2)``."""
    vec = np.asarray(vec)
    a = vec[:n_groups * t1].reshape(n_groups, t1)
    b = vec[n_groups * t1:].reshape(n_groups, t2)
    return np.hstack([a, b])


def sigma_u_block(params):
    s1, s2 = params.sigma1, params.sigma2
    return np.block([
        [s1 * s1 * np.eye(params.t1), s1 * s2 * params.rho],
        [s1 * s2 * params.rho.T, s2 * s2 * np.eye(params.t2)],
    ])


def assemble_sigma_u(params, n_groups):
    """Factor the per-group block of ``Sigma_u``.

    Raises
    ------
    NotPositiveDefinite
        If the block is not positive definite (``rho`` has a singular value >= 1).
    """
    block = sigma_u_block(params)
    L = checked_cholesky(block)
    k = block.shape[0]
    Linv = np.linalg.solve(L, np.eye(k))
    S = np.linalg.cholesky(Linv.T @ Linv).T
    log_det = n_groups * 2.0 * np.sum(np.log(np.diag(L)))
    return SigmaU(block, n_groups, log_det, S, L, params.t1, params.t2)


def assemble_gamma_bar(params):
    """Per-group covariance of the random effects, dimension-1 terms first."""
    l1, l2 = params.lambda1, params.lambda2
    s1, s2 = params.sigma1, params.sigma2
    g11 = s1 * s1 * l1 @ l1.T
    g22 = s2 * s2 * l2 @ l2.T
    g12 = s1 * s2 * l1 @ params.rho @ l2.T
    G = np.block([[g11, g12], [g12.T, g22]])
    return 0.5 * (G + G.T)


def params_from_gamma_bar(gamma_bar, sigma1, sigma2, t1):
    """Recover ``VarianceParams`` from a per-group covariance and residual scales.

    The diagonal of each recovered factor is positive. Raises
    :class:`NotPositiveDefinite` if either diagonal block is singular or the
    implied ``rho`` is not strictly inside the unit ball.
    """
    G = np.asarray(gamma_bar, dtype=float)
    G = 0.5 * (G + G.T)
    g11, g12, g22 = G[:t1, :t1], G[:t1, t1:], G[t1:, t1:]
    l1 = checked_cholesky(g11) / sigma1
    l2 = checked_cholesky(g22) / sigma2
    rho = np.linalg.solve(l1, np.linalg.solve(l2, g12.T).T) / (sigma1 * sigma2)
    params = VarianceParams(theta_from_block(l1), theta_from_block(l2), rho, sigma1, sigma2)
    assemble_sigma_u(params, 1)
    return params
