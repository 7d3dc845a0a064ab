"""Log-likelihoods, information criteria and ZI-type comparison."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expfam import log_pmf
from .fit import FitResult
from .score import Dataset, regression_loglik


class MixedDataError(ValueError):
    pass


@dataclass
class ComparisonRow:
    type_name: str
    tau: tuple[float, float] | None
    loglik: float
    k: int
    aic: float
    bic: float
    rank: int | None = None
    status: str = "ok"
    error: str = ""


def log_likelihood(fit: FitResult, data: Dataset) -> float:
    """Sum of the ZI log-pmf at the fitted per-observation parameters."""
    if fit.omega_unidentified:
        return float(np.sum(log_pmf(fit.base, data.Xb @ fit.beta, data.y)))
    zt = fit.zitype
    return regression_loglik(data, fit.base, zt, fit.beta, fit.alpha)


def information_criteria(loglik: float, k: int, n: int):
    return -2.0 * loglik + 2.0 * k, -2.0 * loglik + k * np.log(n)


def compare(fits, data: Dataset, failed: dict[str, str] | None = None) -> list[ComparisonRow]:
    """Rank fits of one dataset by AIC (ties: fewer parameters, then name).

    ``failed`` maps type names to error messages; those rows are appended
    unranked with status ``"failed"``.
    """
    ident = data.fingerprint()
    rows = []
    for f in fits:
        if f.data_id and f.data_id != ident:
            raise MixedDataError(f"fit {f.type_name!r} was made on different data")
        ll = log_likelihood(f, data)
        aic, bic = information_criteria(ll, f.k, data.n)
        rows.append(ComparisonRow(f.type_name, f.tau, ll, f.k, aic, bic,
                                  status="ok" if f.converged else "not-converged"))
    rows.sort(key=lambda r: (r.aic, r.k, r.type_name))
    for i, r in enumerate(rows, 1):
        r.rank = i
    for name, msg in (failed or {}).items():
        rows.append(ComparisonRow(name, None, float("nan"), 0, float("nan"), float("nan"),
                                  status="failed", error=msg))
    return rows


def _logit(logp, log1mp):
    return logp - log1mp


def diagnostics_pairs(fit: FitResult, data: Dataset) -> dict[str, np.ndarray]:
    """Per-observation (pi0, pit0) pairs in probability and logit metrics, sorted by pi0.

    The ``row`` column holds each observation's original position.
    """
    po = fit.per_obs
    pi0, pit0, omega = po["pi0"], po["pit0"], po["omega"]
    theta = data.Xb @ fit.beta
    lp, l1p = fit.base.log_pi0(theta), fit.base.log1m_pi0(theta)
    logit_pi0 = _logit(lp, l1p)
    order = np.argsort(logit_pi0, kind="stable")
    with np.errstate(divide="ignore"):
        logit_pit0 = logit_pi0 + omega
    return {
        "row": order,
        "pi0": pi0[order],
        "pit0": pit0[order],
        "logit_pi0": logit_pi0[order],
        "logit_pit0": logit_pit0[order],
        "omega": omega[order],
    }
