"""The zero-inflation layer.

A ZI type is a function ``omega(gamma, pi0)`` giving the log-odds gap
``logit(pit0) - logit(pi0)`` between the inflated zero probability ``pit0``
and the base one ``pi0``. Positive counts keep their base probabilities up to
the common factor ``rho = (1 - pit0) / (1 - pi0)``.

Everything is computed from ``log(pi0)`` and ``log(1 - pi0)`` so that extreme
``theta`` does not underflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .expfam import BaseCount, DomainError, log_pmf, sample_truncated_positive

PIT0_MAX = 1.0 - 1e-12
_LOGIT_PIT0_MAX = float(np.log(PIT0_MAX) - np.log1p(-PIT0_MAX))


class InflationOverflow(ValueError):
    """The inflated zero probability reached 1."""


def _slope_grid():
    # logit(pi0) from -36 to 36 plus the exact endpoints
    p = 1.0 / (1.0 + np.exp(-np.linspace(-36.0, 36.0, 721)))
    return np.concatenate([[0.0], p, [1.0]])


@dataclass(frozen=True)
class ZiType:
    """A ZI type: the tau-family ``gamma + tau1 log(pi0) + tau2 log(1 - pi0)`` or the mixture."""

    name: str
    tau1: float = 0.0
    tau2: float = 0.0
    mixture: bool = False
    monotone: bool = field(init=False, compare=False)

    def __post_init__(self):
        if self.mixture:
            mono = True
        else:
            # d logit(pit0) / d logit(pi0) = 1 + u (1 - pi0), linear in pi0
            p = _slope_grid()
            mono = bool(np.all(self._tau_slope(p) >= -1e-12))
        object.__setattr__(self, "monotone", mono)

    @classmethod
    def custom(cls, tau1: float, tau2: float, name: str | None = None) -> "ZiType":
        tau1, tau2 = float(tau1), float(tau2)
        for preset in (MULTIPLICATIVE, ADDITIVE, HURDLE):
            if (preset.tau1, preset.tau2) == (tau1, tau2) and name is None:
                return preset
        return cls(name or f"custom:{tau1:g},{tau2:g}", tau1, tau2)

    @classmethod
    def parse(cls, text: str) -> "ZiType":
        """Parse a preset name or ``custom:tau1,tau2``."""
        key = text.strip().lower()
        if key in PRESETS:
            return PRESETS[key]
        if key.startswith("custom:"):
            try:
                t1, t2 = (float(t) for t in key.split(":", 1)[1].split(","))
            except ValueError:
                raise ValueError(f"bad custom ZI type {text!r}; want custom:tau1,tau2") from None
            return cls.custom(t1, t2)
        raise ValueError(f"unknown ZI type {text!r}")

    @property
    def tau(self):
        return None if self.mixture else (self.tau1, self.tau2)

    def _tau_slope(self, pi0):
        return (1.0 + self.tau1) - (self.tau1 + self.tau2) * pi0

    # -- omega and its derivatives, log-space inputs ------------------------

    def omega(self, gamma, log_pi0, log1m_pi0):
        gamma = np.asarray(gamma, dtype=float)
        if self.mixture:
            return np.logaddexp(log_pi0, -gamma) - log_pi0
        return gamma + self.tau1 * log_pi0 + self.tau2 * log1m_pi0

    def u(self, gamma, log_pi0, log1m_pi0):
        """``pi0 * d omega / d pi0``."""
        gamma = np.asarray(gamma, dtype=float)
        if self.mixture:
            return -np.exp(-gamma - np.logaddexp(log_pi0, -gamma))
        return self.tau1 - self.tau2 * np.exp(log_pi0 - log1m_pi0)

    def v(self, gamma, log_pi0, log1m_pi0):
        """``d omega / d gamma``."""
        if self.mixture:
            return self.u(gamma, log_pi0, log1m_pi0)
        return np.ones(np.broadcast(np.asarray(gamma), np.asarray(log_pi0)).shape)

    def slope(self, gamma, log_pi0, log1m_pi0):
        """``d logit(pit0) / d logit(pi0) = 1 + u (1 - pi0)``."""
        if self.mixture:
            gamma = np.asarray(gamma, dtype=float)
            return np.exp(log_pi0 + np.logaddexp(0.0, -gamma) - np.logaddexp(log_pi0, -gamma))
        return self._tau_slope(np.exp(log_pi0))

    def gamma_from_omega(self, omega, log_pi0, log1m_pi0):
        """Invert ``omega(gamma, pi0)`` for gamma at fixed pi0."""
        omega = np.asarray(omega, dtype=float)
        if self.mixture:
            # e^{-gamma} = pi0 * kappa, only for kappa > 0
            kappa = np.expm1(omega)
            if np.any(kappa <= 0):
                raise DomainError(
                    "the mixture type cannot represent zero deflation (kappa <= 0); "
                    "use a tau-family type"
                )
            return -(log_pi0 + np.log(kappa))
        return omega - self.tau1 * log_pi0 - self.tau2 * log1m_pi0


MULTIPLICATIVE = ZiType("multiplicative", 0.0, 0.0)
ADDITIVE = ZiType("additive", -1.0, 0.0)
HURDLE = ZiType("hurdle", -1.0, 1.0)
MIXTURE = ZiType("mixture", mixture=True)
PRESETS = {t.name: t for t in (MULTIPLICATIVE, ADDITIVE, HURDLE, MIXTURE)}


def omega_and_derivs(zitype: ZiType, gamma, pi0):
    """Return ``(omega, u, v)`` for ``pi0`` in (0, 1)."""
    pi0 = np.asarray(pi0, dtype=float)
    if np.any((pi0 <= 0) | (pi0 >= 1)):
        raise DomainError("pi0 must lie strictly inside (0, 1)")
    lp, l1p = np.log(pi0), np.log1p(-pi0)
    return zitype.omega(gamma, lp, l1p), zitype.u(gamma, lp, l1p), zitype.v(gamma, lp, l1p)


@dataclass(frozen=True)
class ZiDerived:
    """Per-(theta, gamma) quantities; fields are floats or equal-shape arrays."""

    pi0: np.ndarray
    omega: np.ndarray
    kappa: np.ndarray
    rho: np.ndarray
    pit0: np.ndarray
    u: np.ndarray
    v: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    log_pi0: np.ndarray
    log1m_pi0: np.ndarray
    log_pit0: np.ndarray
    log1m_pit0: np.ndarray
    log_rho: np.ndarray
    slope: np.ndarray
    mu: np.ndarray
    var: np.ndarray


@dataclass(frozen=True)
class ZiModel:
    """A base distribution, ZI type and parameters (scalars or aligned arrays)."""

    base: BaseCount
    zitype: ZiType
    theta: float | np.ndarray
    gamma: float | np.ndarray


def derive(base: BaseCount, zitype: ZiType, theta, gamma) -> ZiDerived:
    theta = np.asarray(theta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    lp = base.log_pi0(theta)
    l1p = base.log1m_pi0(theta)
    omega = zitype.omega(gamma, lp, l1p)
    lt = omega + (lp - l1p)
    if np.any(lt >= _LOGIT_PIT0_MAX) or np.any(np.isnan(lt)):
        raise InflationOverflow("inflation overflow: pit0 >= 1 - 1e-12")
    log_pit0 = -np.logaddexp(0.0, -lt)
    log1m_pit0 = -np.logaddexp(0.0, lt)
    log_rho = log1m_pit0 - l1p
    rho = np.exp(log_rho)
    pit0 = np.exp(log_pit0)
    u = zitype.u(gamma, lp, l1p)
    v = zitype.v(gamma, lp, l1p)
    slope = zitype.slope(gamma, lp, l1p)
    phi = rho - u * pit0
    # u + phi = rho * slope, exact zero for the hurdle
    psi = rho * slope / phi
    return ZiDerived(
        pi0=np.exp(lp), omega=omega, kappa=np.expm1(omega), rho=rho, pit0=pit0,
        u=u, v=v, phi=phi, psi=psi, log_pi0=lp, log1m_pi0=l1p,
        log_pit0=log_pit0, log1m_pit0=log1m_pit0, log_rho=log_rho, slope=slope,
        mu=base.mean(theta), var=base.variance(theta),
    )


def derived(model: ZiModel) -> ZiDerived:
    return derive(model.base, model.zitype, model.theta, model.gamma)


def zi_log_pmf(model: ZiModel, y, d: ZiDerived | None = None):
    """``omega * 1{y=0} + log(rho) + log pi_y(theta)``."""
    d = derived(model) if d is None else d
    y = np.asarray(y)
    return np.where(y == 0, d.omega, 0.0) + d.log_rho + log_pmf(model.base, model.theta, y)


def zi_moments(model: ZiModel):
    """Mean ``rho mu`` and variance ``rho Var[Y] + rho (1 - rho) mu^2``."""
    d = derived(model)
    return d.rho * d.mu, d.rho * d.var + d.rho * (1.0 - d.rho) * d.mu**2


def simulate(model: ZiModel, n: int, rng: np.random.Generator):
    """Draw ``n`` counts: zero with probability pit0, else a zero-truncated base draw."""
    d = derived(model)
    theta = np.broadcast_to(np.asarray(model.theta, dtype=float), (n,))
    pit0 = np.broadcast_to(d.pit0, (n,))
    zero = rng.uniform(size=n) <= pit0
    y = np.zeros(n, dtype=np.int64)
    if np.any(~zero):
        y[~zero] = sample_truncated_positive(model.base, theta[~zero], rng)
    return y


def latent_m_distribution(model: ZiModel | None = None, kappa: float | None = None):
    """Distribution of the latent number M of base zeros behind an observed zero.

    Binary for over-inflation (``P(M=1) = 1/(1+kappa)``), geometric on
    ``m >= 1`` with success probability ``1 + kappa`` for deflation, and a
    point mass at 1 without inflation. Returned as a frozen scipy distribution.
    """
    if kappa is None:
        kappa = float(np.asarray(derived(model).kappa))
    if kappa >= 0:
        return stats.bernoulli(1.0 / (1.0 + kappa))
    if kappa <= -1:
        raise DomainError("kappa must exceed -1")
    return stats.geom(1.0 + kappa)


def inflate_pmf(pmf, omega):
    """Apply multiplicative (constant-omega) inflation to an arbitrary pmf on 0..K."""
    pmf = np.asarray(pmf, dtype=float)
    p0 = pmf[0]
    lt = omega + np.log(p0) - np.log1p(-p0)
    pit0 = 1.0 / (1.0 + np.exp(-lt))
    out = pmf * (1.0 - pit0) / (1.0 - p0)
    out[0] = pit0
    return out
