"""Minimization of the profiled ML deviance or REML criterion.

The criterion is exposed as a function of an unconstrained packed vector
``(theta1, theta2, vec(rho), log sigma1, log sigma2)``. ``rho`` is not
transformed there: points where the random-effects covariance is not positive
definite evaluate to a large finite sentinel.

Maximum-likelihood estimates often sit close to the ``rho`` boundary (the
estimated per-group covariance is nearly singular). A search that only sees
the sentinel stalls there, so by default the optimizer moves ``rho`` through a
smooth chart of the open unit ball and evaluates the same packed objective.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import deviance
from .exceptions import InitError, NotPositiveDefinite
from .model import (
    FixedEffects,
    VarianceParams,
    assemble_gamma_bar,
    n_theta,
    theta_from_block,
)

log = logging.getLogger(__name__)

SENTINEL = 1e12
ML, REML = "ML", "REML"


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings.

    ``convergence_tol`` is a tolerance on the relative change of the objective
    between optimizer iterations. ``method`` is any scipy ``minimize`` method
    name; ``"L-BFGS-B"`` (default) and ``"Nelder-Mead"`` are tested.
    ``search_space="chart"`` lets the optimizer move in coordinates where
    ``rho = w (I + w'w)^(-1/2)``, so every point is feasible; ``"packed"``
    searches the packed vector directly and relies on the sentinel barrier.
    The reported iteration counts refer to evaluations of :func:`objective`
    in either case.
    """

    criterion: str = ML
    max_evaluations: int = 5000
    convergence_tol: float = 1e-8
    n_restarts: int = 1
    rng_seed: int = 0
    method: str = "L-BFGS-B"
    search_space: str = "chart"

    def __post_init__(self):
        crit = self.criterion.upper()
        if crit not in (ML, REML):
            raise ValueError(f"criterion must be ML or REML, got {self.criterion!r}")
        object.__setattr__(self, "criterion", crit)
        if self.max_evaluations < 10:
            raise ValueError("max_evaluations must be at least 10")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be at least 1")
        if self.search_space not in ("chart", "packed"):
            raise ValueError(f"search_space must be 'chart' or 'packed', got {self.search_space!r}")


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of a fit.

    ``iterations`` counts objective evaluations for the profiled fit and
    sweeps for EM; ``outer_iterations`` is the optimizer's own iteration count.
    ``params`` is ``None`` for an EM run whose covariance estimate could not be
    mapped back to ``(theta, rho, sigma)``.
    """

    params: VarianceParams
    beta: FixedEffects
    mu: np.ndarray
    gamma_bar: np.ndarray
    criterion_value: float
    iterations: int
    converged: bool
    init_used: np.ndarray
    outer_iterations: int = 0
    criterion: str = ML
    sigma1: float = math.nan
    sigma2: float = math.nan
    trace: tuple = field(default=(), repr=False)
    message: str = ""


def pack(params):
    """Unconstrained vector ``(theta1, theta2, rho row-major, log sigma1, log sigma2)``."""
    return np.concatenate([
        params.theta1, params.theta2, params.rho.ravel(),
        [math.log(params.sigma1), math.log(params.sigma2)],
    ])


def unpack(v, t1, t2):
    v = np.asarray(v, dtype=float)
    a, b = n_theta(t1), n_theta(t2)
    if v.size != a + b + t1 * t2 + 2:
        raise ValueError(f"packed vector has length {v.size}, expected {a + b + t1 * t2 + 2}")
    return VarianceParams(
        v[:a], v[a:a + b], v[a + b:a + b + t1 * t2].reshape(t1, t2),
        math.exp(v[-2]), math.exp(v[-1]))


def criterion_value(data, params, criterion=ML):
    if criterion == ML:
        return deviance.ml_deviance(data, params)
    return deviance.reml_criterion(data, params)


def objective(v, data, criterion=ML):
    """Criterion at ``unpack(v)``; infeasible or degenerate points give ``SENTINEL``."""
    try:
        params = unpack(v, data.t1, data.t2)
        val = criterion_value(data, params, criterion)
    except (NotPositiveDefinite, OverflowError, FloatingPointError):
        return SENTINEL
    return val if math.isfinite(val) else SENTINEL


def rho_to_chart(rho):
    """Map a matrix with singular values < 1 onto all of R^(t1 x t2)."""
    u, sv, vt = np.linalg.svd(rho, full_matrices=False)
    return (u * (sv / np.sqrt(1.0 - sv * sv))) @ vt


def chart_to_rho(w):
    """Inverse of :func:`rho_to_chart`: ``w (I + w'w)^(-1/2)``."""
    u, sv, vt = np.linalg.svd(w, full_matrices=False)
    return (u * (sv / np.sqrt(1.0 + sv * sv))) @ vt


def _rho_slice(t1, t2):
    a = n_theta(t1) + n_theta(t2)
    return slice(a, a + t1 * t2)


def to_search(v, t1, t2):
    """Packed vector to the optimizer's coordinates (``rho`` charted)."""
    w = np.array(v, dtype=float)
    sl = _rho_slice(t1, t2)
    w[sl] = rho_to_chart(w[sl].reshape(t1, t2)).ravel()
    return w


def from_search(w, t1, t2):
    v = np.array(w, dtype=float)
    sl = _rho_slice(t1, t2)
    v[sl] = chart_to_rho(v[sl].reshape(t1, t2)).ravel()
    return v


class _Tracker:
    # objective in search coordinates; keeps the best packed point and counts evaluations

    def __init__(self, data, criterion, budget, charted):
        self.data, self.criterion, self.budget = data, criterion, budget
        self.charted = charted
        self.count = 0
        self.best_v, self.best_f = None, math.inf

    def packed(self, w):
        return from_search(w, self.data.t1, self.data.t2) if self.charted else np.array(w, dtype=float)

    def __call__(self, w):
        self.count += 1
        v = self.packed(w)
        f = objective(v, self.data, self.criterion)
        if f < self.best_f:
            self.best_f, self.best_v = f, v
        return f

    @property
    def remaining(self):
        return self.budget - self.count


def _run_once(data, init_v, opts):
    charted = opts.search_space == "chart"
    track = _Tracker(data, opts.criterion, opts.max_evaluations, charted)
    f0 = objective(init_v, data, opts.criterion)
    if f0 >= SENTINEL:
        raise InitError("objective is infeasible at the starting point")
    track.count, track.best_f, track.best_v = 1, f0, np.array(init_v, dtype=float)
    f_prev = f0
    outer, converged, message = 0, False, ""
    inner_tol = opts.convergence_tol
    # repeat local searches until one no longer changes the objective by more than tol
    for _ in range(20):
        if track.remaining < 2:
            message = "evaluation budget exhausted"
            break
        w = to_search(track.best_v, data.t1, data.t2) if charted else track.best_v
        if opts.method == "Nelder-Mead":
            res = minimize(track, w, method="Nelder-Mead", options={
                "maxfev": track.remaining, "xatol": 1e-10,
                "fatol": inner_tol * max(abs(f_prev), 1.0), "adaptive": w.size > 6})
        elif opts.method == "L-BFGS-B":
            res = minimize(track, w, method="L-BFGS-B", options={
                "maxfun": track.remaining, "ftol": inner_tol, "gtol": 1e-9,
                "maxiter": opts.max_evaluations})
        else:
            res = minimize(track, w, method=opts.method)
        outer += int(getattr(res, "nit", 0))
        message = str(res.message)
        f = track.best_f
        rel = abs(f_prev - f) / max(abs(f_prev), abs(f), 1.0)
        f_prev = f
        if rel <= opts.convergence_tol:
            converged = track.count <= opts.max_evaluations
            break
    return track.best_v, track.best_f, min(track.count, opts.max_evaluations), outer, converged, message


def result_from_params(data, params, value, criterion, iterations, converged, init_v,
                       outer=0, message=""):
    sol = deviance.solve(data, params)
    return FitResult(
        params=params, beta=FixedEffects.from_vector(sol.beta_hat, data.p1), mu=sol.mu,
        gamma_bar=assemble_gamma_bar(params), criterion_value=value,
        iterations=iterations, converged=converged, init_used=np.asarray(init_v),
        outer_iterations=outer, criterion=criterion, sigma1=params.sigma1,
        sigma2=params.sigma2, message=message)


def fit(data, init, opts=None):
    """Fit the bivariate model by minimizing the profiled criterion.

    Parameters
    ----------
    data : GroupedBivariateData
    init : VarianceParams
        Starting point of the first run. Additional restarts
        (``opts.n_restarts > 1``) start from :func:`naive_init` draws seeded by
        ``opts.rng_seed``.
    opts : FitOptions, optional

    Returns
    -------
    FitResult
        The run with the lowest criterion value; ties go to the earlier run.

    Raises
    ------
    InitError
        If the criterion is infeasible at ``init``.
    """
    opts = FitOptions() if opts is None else opts
    init.check(data)
    starts = [pack(init)]
    if opts.n_restarts > 1:
        rng = np.random.default_rng(opts.rng_seed)
        starts += [pack(naive_init((data.t1, data.t2), rng)) for _ in range(opts.n_restarts - 1)]
    best = None
    for start in starts:
        v, f, count, outer, conv, msg = _run_once(data, start, opts)
        if best is None or f < best[1]:
            best = (v, f, count, outer, conv, msg, start)
    v, f, count, outer, conv, msg, start = best
    params = unpack(v, data.t1, data.t2)
    return result_from_params(data, params, f, opts.criterion, count, conv, start, outer, msg)


def naive_init(shapes, rng):
    """Random feasible starting values carrying no information from the data.

    Diagonal factor entries ~ U(0.5, 2), off-diagonal ~ U(-0.5, 0.5),
    ``rho`` entries ~ U(-0.3, 0.3) and residual sds ~ U(0.5, 10).
    """
    t1, t2 = shapes

    def theta(t):
        block = np.zeros((t, t))
        rows, cols = np.tril_indices(t, -1)
        block[rows, cols] = rng.uniform(-0.5, 0.5, size=rows.size)
        block[np.diag_indices(t)] = rng.uniform(0.5, 2.0, size=t)
        return theta_from_block(block)

    th1, th2 = theta(t1), theta(t2)
    rho = rng.uniform(-0.3, 0.3, size=(t1, t2))
    norm = np.linalg.norm(rho, 2)
    if norm >= 0.9:
        # only reachable for large t1*t2
        rho *= 0.9 / norm
    s1, s2 = rng.uniform(0.5, 10.0, size=2)
    return VarianceParams(th1, th2, rho, s1, s2)


def naive_beta(p1, p2, rng):
    """Uninformative fixed-effects start for methods that need one (EM)."""
    return FixedEffects(rng.uniform(-1.0, 1.0, size=p1), rng.uniform(-1.0, 1.0, size=p2))


@dataclass(frozen=True, eq=False)
class MarginalFit:
    theta: np.ndarray
    sigma: float
    beta: np.ndarray
    deviance: float
    evaluations: int


def fit_single_response(data, k, opts=None):
    """Fit dimension ``k`` (1 or 2) on its own, profiling out beta and sigma."""
    opts = FitOptions() if opts is None else opts
    t = data.t1 if k == 1 else data.t2
    start = theta_from_block(np.eye(t))
    count = [0]

    def f(theta):
        count[0] += 1
        try:
            val = deviance.single_response_solve(data, k, theta)[0]
        except NotPositiveDefinite:
            return SENTINEL
        return val if math.isfinite(val) else SENTINEL

    res = minimize(f, start, method="L-BFGS-B",
                   options={"maxfun": opts.max_evaluations, "ftol": opts.convergence_tol, "gtol": 1e-10})
    dev, sigma, beta, _ = deviance.single_response_solve(data, k, res.x)
    return MarginalFit(np.asarray(res.x), sigma, beta, dev, count[0])


def advised_init(data, opts=None, return_beta=False):
    """Starting values from separate single-response fits of each dimension.

    ``rho`` is set to zero. Falls back to :func:`naive_init` (with a logged
    warning) if a marginal fit fails.
    """
    opts = FitOptions() if opts is None else opts
    try:
        m1 = fit_single_response(data, 1, opts)
        m2 = fit_single_response(data, 2, opts)
        params = VarianceParams(m1.theta, m2.theta, np.zeros((data.t1, data.t2)), m1.sigma, m2.sigma)
        beta = FixedEffects(m1.beta, m2.beta)
    except (NotPositiveDefinite, ValueError, FloatingPointError) as err:
        log.warning("marginal fit failed (%s); using a naive start", err)
        rng = np.random.default_rng(opts.rng_seed)
        params = naive_init((data.t1, data.t2), rng)
        beta = naive_beta(data.p1, data.p2, rng)
    return (params, beta) if return_beta else params
