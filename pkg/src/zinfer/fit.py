"""Maximum-likelihood fitting of ZI count models.

The regression fit is block coordinate ascent: a weighted quasi-likelihood
IRLS for ``beta`` with ``alpha`` held fixed, then a logistic regression for
``alpha`` with ``beta`` held fixed (an offset regression for tau-family
types, Lambert's augmented-data EM for the mixture), repeated until the
joint score vanishes. Joint standard errors come from the full expected
information at the optimum.
"""

from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import expit

from .expfam import BaseCount, DomainError, log_pmf
from .score import (
    Dataset,
    NearSingularWarning,
    expected_info,
    regression_derived,
    regression_expected_info,
    regression_loglik,
    regression_score,
)
from .zicore import MULTIPLICATIVE, InflationOverflow, ZiType, derive

log = logging.getLogger(__name__)

SEPARATION_NORM = 30.0
MIN_LOGIT_PI0_SD = 0.05


class ConvergenceError(RuntimeError):
    pass


class DataError(ValueError):
    """The data cannot support the requested fit."""


class NonMonotoneTypeError(ValueError):
    pass


class TypeNotIdentifiable(ValueError):
    pass


@dataclass
class FitOptions:
    tol: float = 1e-8
    step_tol: float = 1e-10
    max_outer: int = 500
    max_inner: int = 100
    max_halvings: int = 100
    max_em: int = 20000

    @classmethod
    def from_env(cls, **kw) -> "FitOptions":
        opts = cls(**kw)
        cap = os.environ.get("ZINFER_MAX_ITER")
        if cap:
            opts.max_outer = int(cap)
        return opts


@dataclass
class FitResult:
    base: BaseCount
    zitype: ZiType
    beta: np.ndarray
    alpha: np.ndarray
    tau: tuple[float, float] | None
    tau_estimated: bool
    loglik: float
    cov: np.ndarray
    converged: bool
    iterations: int
    per_obs: dict[str, np.ndarray]
    ess: float
    n: int
    n0: int
    beta_names: list[str] = field(default_factory=list)
    alpha_names: list[str] = field(default_factory=list)
    trace: list[float] = field(default_factory=list)
    score_norm: float = float("nan")
    near_singular: bool = False
    separation: bool = False
    omega_unidentified: bool = False
    data_id: str = ""

    @property
    def type_name(self) -> str:
        return "estimate-tau" if self.tau_estimated else self.zitype.name

    @property
    def k(self) -> int:
        """Number of free parameters."""
        return self.beta.size + self.alpha.size + (2 if self.tau_estimated else 0)

    @property
    def params(self) -> np.ndarray:
        extra = list(self.tau) if self.tau_estimated else []
        return np.concatenate([self.beta, self.alpha, extra])

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


# -- generic ascent ----------------------------------------------------------


def _safe(objective, x):
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            f = objective(x)
    except (InflationOverflow, FloatingPointError, OverflowError):
        return -np.inf
    return f if np.isfinite(f) else -np.inf


def _ascend(x0, objective, direction, tol, max_iter, max_halvings):
    """Newton-type ascent with step-halving.

    ``direction(x)`` returns ``(step, gradient)``. Stops once the gradient's
    sup-norm is below ``tol`` or the accepted step is negligible.
    Returns ``(x, f, iterations, converged)``.
    """
    x = np.array(x0, dtype=float)
    f = objective(x)
    for it in range(max_iter):
        step, grad = direction(x)
        if np.max(np.abs(grad), initial=0.0) <= tol:
            return x, f, it, True
        # changes below the objective's rounding level count as no change
        slack = 64 * np.finfo(float).eps * (1.0 + abs(f))
        t = 1.0
        for _ in range(max_halvings):
            xn = x + t * step
            fn = _safe(objective, xn)
            if fn >= f - slack:
                break
            t *= 0.5
        else:
            # no ascent left at rounding level: stationary up to float noise
            if np.max(np.abs(grad)) > 1e-4:
                raise ConvergenceError("step-halving failed to increase the objective")
            break
        done = np.max(np.abs(xn - x), initial=0.0) <= 1e-15 * (1.0 + np.max(np.abs(x), initial=0.0))
        x, f = xn, fn
        if done:
            break
    _, grad = direction(x)
    return x, f, max_iter, bool(np.max(np.abs(grad), initial=0.0) <= tol)


def _solve(M, g):
    try:
        return np.linalg.solve(M, g)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(M, g, rcond=None)[0]


def _is_pd(M):
    try:
        np.linalg.cholesky(M)
        return True
    except np.linalg.LinAlgError:
        return False


# -- plain GLM and logistic IRLS ------------------------------------------------


def glm_irls(X, y, base: BaseCount, offset=None, weights=None, beta0=None,
             tol=1e-10, max_iter=100, max_halvings=100):
    """Canonical-link GLM fit (no inflation) by IRLS with step-halving."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)

    def objective(b):
        eta = offset + X @ b
        return float(np.sum(w * (eta * y - base.cumulant(eta))))

    def direction(b):
        eta = offset + X @ b
        g = X.T @ (w * (y - base.mean(eta)))
        M = (X * (w * base.variance(eta))[:, None]).T @ X
        return _solve(M, g), g

    if beta0 is None:
        ybar = np.clip(np.average(y, weights=w), 1e-3, None)
        if base.kind == "binomial":
            ybar = min(ybar, base.trials * (1 - 1e-3))
        beta0 = _solve(X.T @ X, X.T @ np.full(n, float(base.theta_from_mean(ybar))))
    b, _, it, ok = _ascend(beta0, objective, direction, tol, max_iter, max_halvings)
    if not ok:
        raise ConvergenceError("GLM IRLS did not converge")
    return b


def logistic_irls(X, z, offset=None, weights=None, alpha0=None,
                  tol=1e-10, max_iter=100, max_halvings=100):
    """Weighted logistic regression of binary ``z`` on ``X`` with an offset.

    Returns ``(alpha, info)`` where ``info`` is ``X^T W X`` at the solution.
    """
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    n = z.size
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)

    def objective(a):
        eta = offset + X @ a
        return float(np.sum(w * (z * eta - np.logaddexp(0.0, eta))))

    def direction(a):
        p = expit(offset + X @ a)
        g = X.T @ (w * (z - p))
        M = (X * (w * p * (1 - p))[:, None]).T @ X
        return _solve(M, g), g

    a0 = np.zeros(X.shape[1]) if alpha0 is None else np.asarray(alpha0, dtype=float)
    a, _, _, ok = _ascend(a0, objective, direction, tol, max_iter, max_halvings)
    if not ok:
        # complete separation drives the logistic fit off to infinity
        warnings.warn("logistic IRLS did not converge (possible separation)", RuntimeWarning, stacklevel=2)
    p = expit(offset + X @ a)
    return a, (X * (w * p * (1 - p))[:, None]).T @ X


# -- iid ---------------------------------------------------------------------


def fit_iid(base: BaseCount, zitype: ZiType, y, max_iter: int = 200, tol: float = 1e-13) -> FitResult:
    """Fit iid counts by iterative re-scaling / re-weighting.

    Given the current weights the theta equation ``sum psi^I (y - phi mu) = 0``
    is solved in closed form, ``mu = sum(y) / (phi * sum psi^I)``; gamma is
    then reset so that ``pit0 = n0 / n``. For the multiplicative type this is
    pure re-scaling by ``rho``, for the mixture re-weighting of zeros by
    ``1 / (1 + kappa)``.
    """
    y = base.check_support(np.asarray(y)).astype(np.int64)
    n, n0 = y.size, int(np.sum(y == 0))
    if n0 == n:
        raise DataError("all-zero data: theta is not identified")
    if n0 == 0:
        raise DataError("no-zero data: the zero inflation is not identified")
    pit0_hat = n0 / n
    lt_hat = np.log(pit0_hat) - np.log1p(-pit0_hat)
    total = float(np.sum(y))

    def gamma_for(zt, theta):
        lp, l1p = base.log_pi0(theta), base.log1m_pi0(theta)
        return float(zt.gamma_from_omega(lt_hat - (lp - l1p), lp, l1p))

    # every type shares the fixed point; the mixture cannot represent the
    # deflated iterates that occur on the way up from theta = log(ybar), so
    # those steps use plain re-scaling
    it_type = zitype

    def step_gamma(theta):
        nonlocal it_type
        try:
            return gamma_for(it_type, theta)
        except DomainError:
            it_type = MULTIPLICATIVE
            return gamma_for(it_type, theta)

    calls = 0

    def rescale(theta):
        nonlocal calls
        calls += 1
        theta = float(theta)
        d = derive(base, it_type, theta, step_gamma(theta))
        weight_sum = (n - n0) + n0 * float(d.psi)
        mu = total / (float(d.phi) * weight_sum)
        if base.kind == "binomial" and mu >= base.trials:
            raise ConvergenceError("re-scaling pushed the binomial mean to its bound")
        new = float(base.theta_from_mean(mu))
        if not np.isfinite(new):
            raise ConvergenceError("re-scaling diverged (theta not finite)")
        return new

    # plain re-scaling contracts slowly when lambda is small; Steffensen's
    # extrapolation of the same map converges quadratically
    theta0 = float(base.theta_from_mean(np.mean(y)))
    try:
        theta = float(optimize.fixed_point(rescale, theta0, xtol=tol, maxiter=max_iter, method="del2"))
    except RuntimeError as exc:
        raise ConvergenceError(f"iterative re-scaling did not converge: {exc}") from None
    converged, it = True, calls

    gamma = gamma_for(zitype, theta)
    data = Dataset(y, np.ones((n, 1)), np.ones((n, 1)), ["intercept"], ["intercept"])
    return _finish(data, base, zitype, np.array([theta]), np.array([gamma]), None, False,
                   converged, it, [])


# -- regression blocks -------------------------------------------------------


def _check_type(zitype: ZiType, allow_nonmonotone: bool):
    if not zitype.monotone and not allow_nonmonotone:
        raise NonMonotoneTypeError(
            f"ZI type {zitype.name} is not monotone: pit0 decreases as pi0 grows somewhere "
            "(tau-family types need tau1 >= -1 and tau2 <= 1), so the zero weights psi "
            "would be negative; refusing to fit"
        )


def fit_beta_given_alpha(data: Dataset, base: BaseCount, zitype: ZiType, alpha, beta0,
                         options: FitOptions | None = None, allow_nonmonotone: bool = False):
    """Solve the beta score equations with alpha fixed.

    Weighted quasi-likelihood IRLS: working response ``y / phi`` and case
    weights ``psi^I phi``, refreshed every iteration, with step-halving on the
    exact log-likelihood.
    """
    opts = options or FitOptions()
    _check_type(zitype, allow_nonmonotone)
    alpha = np.asarray(alpha, dtype=float)
    Xb, y, zero = data.Xb, data.y.astype(float), data.zero

    def objective(b):
        return regression_loglik(data, base, zitype, b, alpha)

    def direction(b):
        d = regression_derived(data, base, zitype, b, alpha)
        w = np.where(zero, d.psi, 1.0) * d.phi
        g = Xb.T @ (w * (y / d.phi - d.mu))
        M = (Xb * (w * d.var)[:, None]).T @ Xb
        if not _is_pd(M):
            # phi < 0 (possible when u > 0) or a marginally non-monotone
            # estimated tau: Fisher scoring weights are always non-negative
            fi = expected_info(None, d)[:, 0, 0]
            M = (Xb * fi[:, None]).T @ Xb
        return _solve(M, g), g

    b, _, _, ok = _ascend(beta0, objective, direction, opts.tol, opts.max_inner, opts.max_halvings)
    if not ok:
        log.debug("beta IRLS stopped before the score tolerance")
    return b


def _alpha_offset(d, zitype: ZiType):
    return zitype.tau1 * d.log_pi0 + zitype.tau2 * d.log1m_pi0 + (d.log_pi0 - d.log1m_pi0)


def fit_alpha_given_beta(data: Dataset, base: BaseCount, zitype: ZiType, beta, alpha0,
                         options: FitOptions | None = None):
    """Logistic regression of ``1{y=0}`` on ``Xa`` with offset
    ``tau1 log(pi0) + tau2 log(1 - pi0) + logit(pi0)``.

    Returns ``(alpha, separated)``.
    """
    if zitype.mixture:
        raise ValueError("use fit_mixture_alpha for the mixture type")
    opts = options or FitOptions()
    d = derive(base, MULTIPLICATIVE, data.Xb @ np.asarray(beta, dtype=float), 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a, _ = logistic_irls(data.Xa, data.zero, _alpha_offset(d, zitype), alpha0=alpha0,
                             tol=opts.tol, max_iter=opts.max_inner, max_halvings=opts.max_halvings)
    return a, bool(np.max(np.abs(a), initial=0.0) > SEPARATION_NORM)


def fit_mixture_alpha(data: Dataset, base: BaseCount, beta, alpha0,
                      options: FitOptions | None = None, tol: float = 1e-10):
    """Lambert's EM for the mixture's alpha with beta fixed.

    Each zero contributes a J=1 case weighted by ``exp(-omega)`` (the chance it
    came from the count process) and a J=0 case weighted by
    ``1 - exp(-omega)``; each positive count a J=1 case of weight 1. The
    weighted logistic regression of J on the covariates is refit until alpha
    stops moving.
    """
    opts = options or FitOptions()
    from .zicore import MIXTURE

    Xa, zero = data.Xa, data.zero
    Xz = Xa[zero]
    X_aug = np.vstack([Xa, Xz])
    J_aug = np.concatenate([np.ones(data.n), np.zeros(Xz.shape[0])])
    alpha = np.asarray(alpha0, dtype=float).copy()
    for it in range(1, opts.max_em + 1):
        d = regression_derived(data, base, MIXTURE, beta, alpha)
        if np.any(d.kappa <= 0):
            raise DomainError(
                "mixture EM needs over-inflation (kappa > 0) everywhere; "
                "use a tau-family type for zero deflation"
            )
        keep = np.exp(-d.omega[zero])
        w = np.concatenate([np.where(zero, 0.0, 1.0), 1.0 - keep])
        w[:data.n][zero] = keep
        new, _ = logistic_irls(X_aug, J_aug, weights=w, alpha0=alpha, tol=1e-12,
                               max_iter=opts.max_inner, max_halvings=opts.max_halvings)
        step = np.max(np.abs(new - alpha), initial=0.0)
        alpha = new
        if step <= tol:
            break
    else:
        log.warning("mixture EM hit its iteration cap")
    return alpha, bool(np.max(np.abs(alpha), initial=0.0) > SEPARATION_NORM)


def estimate_tau(data: Dataset, base: BaseCount, beta, alpha0=None, options: FitOptions | None = None):
    """Logistic regression of ``1{y=0}`` on ``[Xa, log(pi0), log(1 - pi0)]``
    with offset ``logit(pi0)``.

    Returns ``(alpha, tau1, tau2, cov)``; ``cov`` is the inverse of the
    logistic information, conditional on beta.
    """
    opts = options or FitOptions()
    d = derive(base, MULTIPLICATIVE, data.Xb @ np.asarray(beta, dtype=float), 0.0)
    if np.any(d.pi0 <= 0) or np.any(d.pi0 >= 1):
        raise TypeNotIdentifiable("pi0 must lie strictly inside (0, 1)")
    g = d.log_pi0 - d.log1m_pi0
    if np.std(g) < MIN_LOGIT_PI0_SD:
        raise TypeNotIdentifiable(
            "type not identifiable: logit(pi0) barely varies, so log(pi0) and "
            "log(1 - pi0) are collinear with the intercept"
        )
    X = np.column_stack([data.Xa, d.log_pi0, d.log1m_pi0])
    start = np.zeros(X.shape[1])
    if alpha0 is not None:
        start[: len(alpha0)] = alpha0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        coef, info = logistic_irls(X, data.zero, g, alpha0=start, tol=opts.tol,
                                   max_iter=opts.max_inner, max_halvings=opts.max_halvings)
    cov, _ = _invert(info)
    return coef[:-2], float(coef[-2]), float(coef[-1]), cov


# -- joint fit -----------------------------------------------------------------


def _invert(info):
    cond = np.linalg.cond(info)
    if np.isfinite(cond) and cond <= 1e10:
        return np.linalg.inv(info), False
    return np.linalg.pinv(info), True


def _finish(data, base, zitype, beta, alpha, tau, tau_estimated, converged, iterations, trace,
            separation=False):
    d = regression_derived(data, base, zitype, beta, alpha)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearSingularWarning)
        info, _ = regression_expected_info(data, base, zitype, beta, alpha, with_tau=tau_estimated)
    cov, near = _invert(info)
    grad = regression_score(data, base, zitype, beta, alpha, with_tau=tau_estimated)
    zero = data.zero
    return FitResult(
        base=base, zitype=zitype, beta=np.asarray(beta, float), alpha=np.asarray(alpha, float),
        tau=tau if tau is not None else zitype.tau, tau_estimated=tau_estimated,
        loglik=regression_loglik(data, base, zitype, beta, alpha), cov=cov,
        converged=converged, iterations=iterations,
        per_obs={"pi0": d.pi0, "pit0": d.pit0, "phi": d.phi, "psi": d.psi, "omega": d.omega},
        ess=float(np.sum(np.where(zero, d.psi, 1.0))), n=data.n, n0=data.n0,
        beta_names=list(data.beta_names), alpha_names=list(data.alpha_names),
        trace=list(trace), score_norm=float(np.max(np.abs(grad), initial=0.0)),
        near_singular=near, separation=separation, data_id=data.fingerprint(),
    )


def _joint_step(data, base, zt, beta, alpha, tau, estimate, opts):
    """One Fisher-scoring step on all coefficients, with step-halving.

    Block updates alone zigzag slowly when beta and alpha are strongly
    coupled; this step uses the full expected information to cut across.
    Returns the (possibly unchanged) ``(beta, alpha, tau, zt)``.
    """
    p, q = data.p, data.q

    def unpack(x):
        t = (float(x[p + q]), float(x[p + q + 1])) if estimate else tau
        z = ZiType("estimated", *t) if estimate else zt
        return x[:p], x[p:p + q], t, z

    def objective(x):
        b, a, _, z = unpack(x)
        return regression_loglik(data, base, z, b, a)

    x = np.concatenate([beta, alpha, tau if estimate else ()])
    f = objective(x)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NearSingularWarning)
            info, near = regression_expected_info(data, base, zt, beta, alpha, with_tau=estimate)
    except InflationOverflow:
        return beta, alpha, tau, zt
    if near or not _is_pd(info):
        return beta, alpha, tau, zt
    g = regression_score(data, base, zt, beta, alpha, with_tau=estimate)
    step = _solve(info, g)
    t = 1.0
    for _ in range(opts.max_halvings):
        xn = x + t * step
        b, a, tn, z = unpack(xn)
        if estimate or z.mixture or z.monotone:
            fn = _safe(objective, xn)
            if fn > f:
                if z.mixture:
                    d = regression_derived(data, base, z, b, a)
                    if np.any(d.kappa <= 0):
                        t *= 0.5
                        continue
                return b, a, tn, z
        t *= 0.5
    return beta, alpha, tau, zt


def fit_joint(data: Dataset, base: BaseCount, zitype: ZiType | str,
              options: FitOptions | None = None) -> FitResult:
    """Joint ML fit of (beta, alpha[, tau]) by alternating the two blocks.

    ``zitype`` may be the string ``"estimate-tau"`` to treat (tau1, tau2) as
    free parameters, started from the multiplicative type.
    """
    opts = options or FitOptions.from_env()
    base.check_support(data.y)
    estimate = isinstance(zitype, str) and zitype == "estimate-tau"
    zt = MULTIPLICATIVE if estimate else (ZiType.parse(zitype) if isinstance(zitype, str) else zitype)
    if not estimate:
        _check_type(zt, False)

    beta = glm_irls(data.Xb, data.y, base)
    if data.q == 0:
        return _finish(data, base, zt, beta, np.zeros(0), None, False, True, 0, [])
    if data.n0 == 0:
        return _null_result(data, base, zt, beta)
    if data.n0 == data.n:
        raise DataError("all-zero data: theta is not identified")

    alpha = np.zeros(data.q)
    tau = (0.0, 0.0) if estimate else zt.tau
    trace = [regression_loglik(data, base, zt, beta, alpha)]
    converged, separated = False, False
    outer = 0
    for outer in range(1, opts.max_outer + 1):
        prev = np.concatenate([beta, alpha, tau or ()])
        beta = fit_beta_given_alpha(data, base, zt, alpha, beta, opts, allow_nonmonotone=estimate)
        if estimate:
            alpha, t1, t2, _ = estimate_tau(data, base, beta, alpha, opts)
            tau = (t1, t2)
            zt = ZiType("estimated", t1, t2)
            separated = bool(np.max(np.abs(alpha), initial=0.0) > SEPARATION_NORM)
        elif zt.mixture:
            alpha, separated = fit_mixture_alpha(data, base, beta, alpha, opts)
        else:
            alpha, separated = fit_alpha_given_beta(data, base, zt, beta, alpha, opts)
        beta, alpha, tau, zt = _joint_step(data, base, zt, beta, alpha, tau, estimate, opts)
        trace.append(regression_loglik(data, base, zt, beta, alpha))
        grad = regression_score(data, base, zt, beta, alpha, with_tau=estimate)
        step = np.max(np.abs(np.concatenate([beta, alpha, tau or ()]) - prev))
        log.debug("outer %d: loglik %.12g |score| %.3g |step| %.3g", outer, trace[-1],
                  np.max(np.abs(grad)), step)
        if np.max(np.abs(grad)) <= opts.tol and step <= opts.step_tol:
            converged = True
            break
    return _finish(data, base, zt, beta, alpha, tau, estimate, converged, outer, trace, separated)


def _null_result(data: Dataset, base: BaseCount, zitype: ZiType, beta) -> FitResult:
    """No zeros at all: the inflation runs off to -inf, so report the plain GLM."""
    theta = data.Xb @ beta
    V = base.variance(theta)
    p, q = data.p, data.q
    cov = np.full((p + q, p + q), np.nan)
    cov[:p, :p], near = _invert((data.Xb * V[:, None]).T @ data.Xb)
    pi0 = base.pi0(theta)
    ones = np.ones(data.n)
    return FitResult(
        base=base, zitype=zitype, beta=beta, alpha=np.full(q, np.nan), tau=zitype.tau,
        tau_estimated=False, loglik=float(np.sum(log_pmf(base, theta, data.y))), cov=cov,
        converged=True, iterations=0,
        per_obs={"pi0": pi0, "pit0": np.zeros(data.n), "phi": ones, "psi": ones,
                 "omega": np.full(data.n, -np.inf)},
        ess=float(data.n), n=data.n, n0=0, beta_names=list(data.beta_names),
        alpha_names=list(data.alpha_names), near_singular=near, omega_unidentified=True,
        score_norm=0.0, data_id=data.fingerprint(),
    )
