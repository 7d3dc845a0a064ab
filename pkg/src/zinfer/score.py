"""Score functions and information matrices.

Single-observation functions work on a :class:`~zinfer.zicore.ZiModel`;
the regression functions take a :class:`Dataset` plus coefficient vectors
and sandwich the per-observation quantities between covariate rows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .expfam import BaseCount
from .zicore import MULTIPLICATIVE, ZiDerived, ZiModel, ZiType, derive, derived, zi_log_pmf

NEAR_SINGULAR_COND = 1e10


class NearSingularWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ScorePair:
    s_theta: np.ndarray
    s_gamma: np.ndarray


@dataclass
class Dataset:
    """Counts ``y`` with a theta-side design ``Xb`` and a ZI-side design ``Xa``."""

    y: np.ndarray
    Xb: np.ndarray
    Xa: np.ndarray
    beta_names: list[str] = field(default_factory=list)
    alpha_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.y = np.asarray(self.y)
        if self.y.ndim != 1:
            raise ValueError("y must be one-dimensional")
        if np.any(self.y < 0) or np.any(self.y != np.floor(self.y)):
            raise ValueError("y must hold non-negative integer counts")
        self.y = self.y.astype(np.int64)
        n = self.y.size
        self.Xb = np.asarray(self.Xb, dtype=float).reshape(n, -1)
        self.Xa = np.asarray(self.Xa, dtype=float).reshape(n, -1)
        if not (np.all(np.isfinite(self.Xb)) and np.all(np.isfinite(self.Xa))):
            raise ValueError("design matrices must be finite")
        if n < self.p + self.q:
            raise ValueError("need at least p + q observations")
        if not self.beta_names:
            self.beta_names = [f"b{j}" for j in range(self.p)]
        if not self.alpha_names:
            self.alpha_names = [f"a{j}" for j in range(self.q)]

    @property
    def n(self):
        return self.y.size

    @property
    def p(self):
        return self.Xb.shape[1]

    @property
    def q(self):
        return self.Xa.shape[1]

    @property
    def n0(self):
        return int(np.sum(self.y == 0))

    @property
    def zero(self):
        return self.y == 0

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in (self.y, self.Xb, self.Xa):
            h.update(np.ascontiguousarray(arr).tobytes())
            h.update(repr(arr.shape).encode())
        return h.hexdigest()[:16]


# -- single observation ------------------------------------------------------


def score_obs(model: ZiModel, y, d: ZiDerived | None = None) -> ScorePair:
    """``s_theta = -(I - pit0) u mu + (y - rho mu)``, ``s_gamma = (I - pit0) v``."""
    d = derived(model) if d is None else d
    y = np.asarray(y, dtype=float)
    ind = (y == 0).astype(float)
    s_theta = -(ind - d.pit0) * d.u * d.mu + (y - d.rho * d.mu)
    s_gamma = (ind - d.pit0) * d.v
    return ScorePair(s_theta, s_gamma)


def expected_info(model: ZiModel, d: ZiDerived | None = None) -> np.ndarray:
    """Fisher information ``G H G^T`` for (theta, gamma).

    ``H`` is the covariance of ``(Y~, 1{Y~=0})`` and ``G = [[1, -u mu], [0, v]]``.
    Broadcasts: array parameters give an ``(..., 2, 2)`` stack.
    """
    d = derived(model) if d is None else d
    rho, mu, pit0 = d.rho, d.mu, d.pit0
    h11 = rho * d.var + rho * (1.0 - rho) * mu**2
    h12 = -rho * mu * pit0
    h22 = pit0 * (1.0 - pit0)
    a = -d.u * mu
    v = d.v
    i11 = h11 + 2.0 * a * h12 + a * a * h22
    i12 = v * (h12 + a * h22)
    i22 = v * v * h22
    return np.stack([np.stack([i11, i12], -1), np.stack([i12, i22], -1)], -2)


def _tau_hessian(model: ZiModel, y, d: ZiDerived):
    y = np.asarray(y, dtype=float)
    ind = (y == 0).astype(float)
    zt: ZiType = model.zitype
    mu, V, rho, pit0, u, v = d.mu, d.var, d.rho, d.pit0, d.u, d.v
    # d logit(pit0) / d theta
    dlt = -mu * d.slope / np.exp(d.log1m_pi0)
    dpit0 = pit0 * (1.0 - pit0) * dlt
    drho = rho * mu * (1.0 - rho + pit0 * u)
    du = zt.tau2 * mu * d.pi0 / np.exp(2.0 * d.log1m_pi0)
    h_tt = -drho * mu - rho * V + dpit0 * u * mu - (ind - pit0) * (du * mu + u * V)
    h_tg = mu * pit0 * v * rho * d.slope
    h_gg = -pit0 * (1.0 - pit0) * v * v
    return h_tt, h_tg, h_gg


def observed_info(model: ZiModel, y, h: float = 1e-5) -> np.ndarray:
    """Negative Hessian of ``log pit_y`` in (theta, gamma).

    Analytic for tau-family types; central differences of the analytic score
    for the mixture.
    """
    d = derived(model)
    if not model.zitype.mixture:
        h_tt, h_tg, h_gg = _tau_hessian(model, y, d)
    else:
        theta = np.asarray(model.theta, dtype=float)
        gamma = np.asarray(model.gamma, dtype=float)
        ht = h * np.maximum(1.0, np.abs(theta))
        hg = h * np.maximum(1.0, np.abs(gamma))

        def sc(t, g):
            return score_obs(ZiModel(model.base, model.zitype, t, g), y)

        sp, sm = sc(theta + ht, gamma), sc(theta - ht, gamma)
        gp, gm = sc(theta, gamma + hg), sc(theta, gamma - hg)
        h_tt = (sp.s_theta - sm.s_theta) / (2 * ht)
        h_gg = (gp.s_gamma - gm.s_gamma) / (2 * hg)
        h_tg = 0.5 * ((gp.s_theta - gm.s_theta) / (2 * hg) + (sp.s_gamma - sm.s_gamma) / (2 * ht))
    h_tt, h_tg, h_gg = np.broadcast_arrays(h_tt, h_tg, h_gg)
    return -np.stack([np.stack([h_tt, h_tg], -1), np.stack([h_tg, h_gg], -1)], -2)


# -- regression --------------------------------------------------------------


def linear_predictors(data: Dataset, beta, alpha):
    theta = data.Xb @ np.asarray(beta, dtype=float)
    gamma = data.Xa @ np.asarray(alpha, dtype=float) if data.q else np.zeros(data.n)
    return theta, gamma


def regression_derived(data: Dataset, base: BaseCount, zitype: ZiType, beta, alpha) -> ZiDerived:
    """Per-observation derived quantities. An empty ZI design means no inflation."""
    theta, gamma = linear_predictors(data, beta, alpha)
    zt = zitype if data.q else MULTIPLICATIVE
    return derive(base, zt, theta, gamma)


def regression_loglik(data: Dataset, base: BaseCount, zitype: ZiType, beta, alpha) -> float:
    theta, gamma = linear_predictors(data, beta, alpha)
    zt = zitype if data.q else MULTIPLICATIVE
    model = ZiModel(base, zt, theta, gamma)
    return float(np.sum(zi_log_pmf(model, data.y)))


def _alpha_columns(data: Dataset, d: ZiDerived, with_tau: bool):
    if not with_tau:
        return data.Xa
    return np.column_stack([data.Xa, d.log_pi0, d.log1m_pi0])


def regression_score(data: Dataset, base: BaseCount, zitype: ZiType, beta, alpha,
                     with_tau: bool = False) -> np.ndarray:
    """Gradient of the total log-likelihood in (beta, alpha[, tau1, tau2]).

    beta block: ``sum psi^I (y - phi mu) x_b``; alpha block:
    ``sum (I - pit0) v x_a``. With ``with_tau`` the tau coefficients are
    free parameters whose covariates are ``log(pi0)`` and ``log(1 - pi0)``.
    """
    d = regression_derived(data, base, zitype, beta, alpha)
    ind = data.zero
    y = data.y.astype(float)
    s_theta = np.where(ind, d.psi, 1.0) * (y - d.phi * d.mu)
    s_gamma = (ind - d.pit0) * d.v
    if not data.q:
        return data.Xb.T @ s_theta
    return np.concatenate([data.Xb.T @ s_theta, _alpha_columns(data, d, with_tau).T @ s_gamma])


def regression_expected_info(data: Dataset, base: BaseCount, zitype: ZiType, beta, alpha,
                             with_tau: bool = False):
    """Expected information for the stacked coefficients.

    Returns ``(info, near_singular)``; ``near_singular`` is set when the
    condition number exceeds 1e10.
    """
    d = regression_derived(data, base, zitype, beta, alpha)
    fi = expected_info(None, d)
    Xb = data.Xb
    if data.q:
        Xa = _alpha_columns(data, d, with_tau)
        top = np.hstack([(Xb * fi[:, 0, 0, None]).T @ Xb, (Xb * fi[:, 0, 1, None]).T @ Xa])
        bot = np.hstack([(Xa * fi[:, 1, 0, None]).T @ Xb, (Xa * fi[:, 1, 1, None]).T @ Xa])
        info = np.vstack([top, bot])
    else:
        info = (Xb * fi[:, 0, 0, None]).T @ Xb
    info = 0.5 * (info + info.T)
    cond = np.linalg.cond(info)
    near_singular = bool(not np.isfinite(cond) or cond > NEAR_SINGULAR_COND)
    if near_singular:
        warnings.warn("expected information is near-singular", NearSingularWarning, stacklevel=2)
    return info, near_singular
