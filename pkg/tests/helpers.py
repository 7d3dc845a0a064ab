"""Independent oracles shared by the test modules."""

import numpy as np
from scipy import stats


def base_pmf_oracle(kind, trials, theta, ys):
    """Base pmf straight from scipy.stats, not from zinfer."""
    if kind == "poisson":
        return stats.poisson.pmf(ys, np.exp(theta))
    return stats.binom.pmf(ys, trials, 1.0 / (1.0 + np.exp(-theta)))


def zi_pmf_oracle(pmf, omega):
    """Re-weight a base pmf so that its zero log-odds gain ``omega``."""
    pmf = np.asarray(pmf, dtype=float)
    odds = np.exp(omega) * pmf[0] / (1.0 - pmf[0])
    pit0 = odds / (1.0 + odds)
    out = pmf * (1.0 - pit0) / (1.0 - pmf[0])
    out[0] = pit0
    return out


def chi2_gof(draws, pmf, min_expected=5.0):
    """Chi-square goodness-of-fit p-value of integer draws against ``pmf`` on 0..K.

    Cells with small expected counts are pooled into their neighbours; the
    final cell absorbs the upper tail.
    """
    draws = np.asarray(draws)
    n = draws.size
    K = pmf.size - 1
    obs = np.bincount(np.minimum(draws, K), minlength=K + 1).astype(float)
    exp = n * pmf.astype(float)
    exp[K] += n * max(0.0, 1.0 - pmf.sum())
    o_cells, e_cells = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(obs, exp):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            o_cells.append(o_acc)
            e_cells.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        o_cells[-1] += o_acc
        e_cells[-1] += e_acc
    o_cells, e_cells = np.array(o_cells), np.array(e_cells)
    e_cells *= o_cells.sum() / e_cells.sum()
    return stats.chisquare(o_cells, e_cells).pvalue


def fd_grad(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h * max(1.0, abs(x[j]))
        g[j] = (f(x + e) - f(x - e)) / (2 * e[j])
    return g
