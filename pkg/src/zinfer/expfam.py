"""Exponential-family base count distributions.

Every distribution here is parameterised by its natural parameter ``theta``
(Poisson: ``theta = log(lam)``; Binomial: ``theta = logit(p)``), so that

    log pmf(y) = theta * y - A(theta) + log h(y).

All functions broadcast over numpy arrays of ``theta`` and ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln

MAX_TRUNCATION_ATTEMPTS = 10**6


class DomainError(ValueError):
    """An argument lies outside the support or parameter space."""


class SamplingError(RuntimeError):
    """Rejection sampling cannot terminate in reasonable time."""


@dataclass(frozen=True)
class BaseCount:
    """A Poisson or Binomial(trials) count distribution."""

    kind: str = "poisson"
    trials: int | None = None

    def __post_init__(self):
        if self.kind not in ("poisson", "binomial"):
            raise ValueError(f"unknown base distribution {self.kind!r}")
        if self.kind == "binomial":
            if self.trials is None or int(self.trials) != self.trials or self.trials < 1:
                raise ValueError("binomial trials must be a positive integer")
        elif self.trials is not None:
            raise ValueError("trials only applies to the binomial base")

    @classmethod
    def poisson(cls) -> "BaseCount":
        return cls("poisson")

    @classmethod
    def binomial(cls, trials: int) -> "BaseCount":
        return cls("binomial", int(trials))

    @classmethod
    def parse(cls, text: str) -> "BaseCount":
        """Parse ``"poisson"`` or ``"binomial:N"``."""
        text = text.strip().lower()
        if text == "poisson":
            return cls.poisson()
        if text.startswith("binomial:"):
            try:
                trials = int(text.split(":", 1)[1])
            except ValueError:
                raise ValueError(f"bad binomial trials in {text!r}") from None
            return cls.binomial(trials)
        raise ValueError(f"unknown base distribution {text!r}")

    def __str__(self):
        return "poisson" if self.kind == "poisson" else f"binomial:{self.trials}"

    # -- cumulant and moments -------------------------------------------

    def cumulant(self, theta):
        """A(theta)."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "poisson":
            return np.exp(theta)
        return self.trials * np.logaddexp(0.0, theta)

    def mean(self, theta):
        """A'(theta)."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "poisson":
            return np.exp(theta)
        return self.trials * expit(theta)

    def variance(self, theta):
        """A''(theta)."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "poisson":
            return np.exp(theta)
        p = expit(theta)
        return self.trials * p * (1.0 - p)

    def theta_from_mean(self, mu):
        """Inverse of the mean map (the canonical link)."""
        mu = np.asarray(mu, dtype=float)
        if self.kind == "poisson":
            return np.log(mu)
        p = mu / self.trials
        return np.log(p) - np.log1p(-p)

    def log_pi0(self, theta):
        """log P(Y = 0), computed without forming P(Y = 0)."""
        return -self.cumulant(theta)

    def log1m_pi0(self, theta):
        """log P(Y > 0)."""
        return log1mexp(self.cumulant(theta))

    def pi0(self, theta):
        return np.exp(self.log_pi0(theta))

    def upper(self, theta, width: float = 20.0) -> int:
        """A y-cutoff beyond which the remaining mass is negligible."""
        if self.kind == "binomial":
            return self.trials
        mu = float(np.max(self.mean(theta)))
        return int(np.ceil(mu + width * np.sqrt(mu) + width))

    def check_support(self, y):
        y = np.asarray(y)
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise DomainError("counts must be non-negative integers")
        if self.kind == "binomial" and np.any(y > self.trials):
            raise DomainError(f"binomial counts must not exceed {self.trials}")
        return y


def log1mexp(a):
    """log(1 - exp(-a)) for a > 0, accurate at both ends."""
    a = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(a < np.log(2.0), np.log(-np.expm1(-a)), np.log1p(-np.exp(-a)))


def log_pmf(base: BaseCount, theta, y):
    """Log probability of ``y`` under the base distribution, base measure included."""
    y = base.check_support(y).astype(float)
    theta = np.asarray(theta, dtype=float)
    if base.kind == "poisson":
        log_h = -gammaln(y + 1.0)
    else:
        n = base.trials
        log_h = gammaln(n + 1.0) - gammaln(y + 1.0) - gammaln(n - y + 1.0)
    # theta * y is 0 * (-inf) safe because theta is finite
    return theta * y - base.cumulant(theta) + log_h


def moments(base: BaseCount, theta):
    """Return ``(mean, variance, pi0)`` at ``theta``."""
    return base.mean(theta), base.variance(theta), base.pi0(theta)


def sample(base: BaseCount, theta, rng: np.random.Generator, size=None):
    """Draw from the base distribution (numpy's PTRS/inversion samplers)."""
    theta = np.asarray(theta, dtype=float)
    if base.kind == "poisson":
        return rng.poisson(np.exp(theta), size=size)
    return rng.binomial(base.trials, expit(theta), size=size)


def sample_truncated_positive(base: BaseCount, theta, rng: np.random.Generator, size=None):
    """Draw from the base distribution conditioned on ``y >= 1``.

    Plain rejection of zeros. Raises :class:`SamplingError` when the expected
    number of attempts ``1 / (1 - pi0)`` exceeds ``MAX_TRUNCATION_ATTEMPTS``.
    """
    theta = np.asarray(theta, dtype=float)
    if size is not None:
        theta = np.broadcast_to(theta, size)
    expected_attempts = np.exp(-base.log1m_pi0(theta))
    if np.any(expected_attempts > MAX_TRUNCATION_ATTEMPTS):
        raise SamplingError(
            "P(Y=0) too close to 1 for zero-truncated rejection sampling"
        )
    shape = theta.shape
    flat = theta.ravel()
    out = sample(base, flat, rng)
    pending = np.flatnonzero(out == 0)
    attempts = 1
    while pending.size:
        if attempts >= MAX_TRUNCATION_ATTEMPTS:
            raise SamplingError("truncated sampler exceeded the attempt cap")
        draws = sample(base, flat[pending], rng)
        out[pending] = draws
        pending = pending[draws == 0]
        attempts += 1
    return out.reshape(shape) if shape else int(out[0])
