import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import optimize
from scipy.special import expit, logit

from zinfer.expfam import BaseCount, DomainError
from zinfer.fit import (
    DataError,
    FitOptions,
    NonMonotoneTypeError,
    TypeNotIdentifiable,
    estimate_tau,
    fit_alpha_given_beta,
    fit_beta_given_alpha,
    fit_iid,
    fit_joint,
    fit_mixture_alpha,
    glm_irls,
    logistic_irls,
)
from zinfer.score import Dataset, regression_loglik, regression_score
from zinfer.zicore import ADDITIVE, HURDLE, MIXTURE, MULTIPLICATIVE, ZiModel, ZiType, simulate, zi_log_pmf

P = BaseCount.poisson()
TYPES = [MULTIPLICATIVE, ADDITIVE, HURDLE, MIXTURE]
WORKED = np.array([0, 0, 0, 0, 1, 2, 1, 3, 1, 2])


def lam_oracle():
    return optimize.brentq(lambda lam: 0.6 * lam - 1 + np.exp(-lam), 0.1, 10.0, xtol=1e-15)


def simulate_regression(rng, zt, n, beta=(0.5, 0.8), alpha=(0.4,), base=P):
    x = rng.normal(size=n)
    Xb = np.column_stack([np.ones(n), x])
    Xa = np.ones((n, len(alpha)))
    if len(alpha) > 1:
        Xa[:, 1] = rng.uniform(-1, 1, size=n)
    y = simulate(ZiModel(base, zt, Xb @ np.array(beta), Xa @ np.array(alpha)), n, rng)
    return Dataset(y, Xb, Xa, ["intercept", "x"], ["intercept", "z"][: len(alpha)])


# -- iid -----------------------------------------------------------------------


def test_worked_example_all_types():
    lam = lam_oracle()
    pi0 = np.exp(-lam)
    omega = logit(0.4) - logit(pi0)
    expected_gamma = {
        "multiplicative": omega,
        "additive": omega + np.log(pi0),
        "hurdle": logit(0.4),
        "mixture": -np.log(pi0 * np.expm1(omega)),
    }
    for zt in TYPES:
        f = fit_iid(P, zt, WORKED)
        assert f.converged
        assert np.exp(f.beta[0]) == pytest.approx(lam, abs=1e-10)
        assert np.exp(f.beta[0]) == pytest.approx(1.1263, abs=5e-4)
        assert f.per_obs["pit0"][0] == pytest.approx(0.4, abs=1e-10)
        assert f.alpha[0] == pytest.approx(expected_gamma[zt.name], abs=1e-9)
    assert fit_iid(P, HURDLE, WORKED).alpha[0] == pytest.approx(-0.405465, abs=5e-7)
    assert fit_iid(P, MULTIPLICATIVE, WORKED).alpha[0] == pytest.approx(0.3290, abs=5e-4)


@pytest.mark.parametrize("base", [P, BaseCount.binomial(8)])
def test_iid_type_equivalence(base, rng):
    for _ in range(5):
        theta = rng.uniform(-0.8, 0.3)
        y = simulate(ZiModel(base, MULTIPLICATIVE, theta, rng.uniform(1.0, 2.0)), 200, rng)
        fits = [fit_iid(base, zt, y) for zt in TYPES]
        for f in fits:
            assert_allclose(f.beta[0], fits[0].beta[0], atol=1e-8)
            assert f.per_obs["pit0"][0] == pytest.approx(np.mean(y == 0), abs=1e-10)
            # the weighted-average identity behind re-weighting
            d_phi, d_psi = f.per_obs["phi"][0], f.per_obs["psi"][0]
            mu = base.mean(f.beta[0])
            n0 = np.sum(y == 0)
            assert d_phi * mu * ((y.size - n0) + n0 * d_psi) == pytest.approx(y.sum(), rel=1e-8)


def test_iid_null_data(rng):
    y = rng.poisson(2.0, size=20000)
    f = fit_iid(P, MULTIPLICATIVE, y)
    se = np.sqrt(y.mean() / y.size)
    assert abs(np.exp(f.beta[0]) - y.mean()) <= 3 * se
    assert abs(f.alpha[0]) <= 3 * f.se[1]


def test_iid_degenerate_data():
    with pytest.raises(DataError, match="all-zero"):
        fit_iid(P, MULTIPLICATIVE, [0, 0, 0])
    with pytest.raises(DataError, match="no-zero"):
        fit_iid(P, HURDLE, [1, 2, 3])


# -- blocks ----------------------------------------------------------------------


def _glm_oracle(X, y):
    def score(b):
        return X.T @ (y - np.exp(X @ b))

    sol = optimize.root(score, np.zeros(X.shape[1]), tol=1e-14)
    assert np.max(np.abs(score(sol.x))) <= 1e-8
    return sol.x


def test_beta_block_null_is_glm(rng):
    data = simulate_regression(rng, MULTIPLICATIVE, 400, alpha=(0.0,))
    b = fit_beta_given_alpha(data, P, MULTIPLICATIVE, [0.0], np.zeros(2))
    assert_allclose(b, _glm_oracle(data.Xb, data.y), atol=1e-8)
    assert_allclose(glm_irls(data.Xb, data.y, P), b, atol=1e-8)


def test_hurdle_beta_is_truncated_fit(rng):
    data = simulate_regression(rng, HURDLE, 600, alpha=(0.3,))
    f = fit_joint(data, P, HURDLE)
    pos = data.y > 0
    X, y = data.Xb[pos], data.y[pos]

    def trunc_score(b):
        mu = np.exp(X @ b)
        return X.T @ (y - mu / -np.expm1(-mu))

    sol = optimize.root(trunc_score, np.zeros(2), tol=1e-14)
    assert_allclose(f.beta, sol.x, atol=1e-6)


def test_mixture_weights_at_optimum(rng):
    data = simulate_regression(rng, MIXTURE, 500, alpha=(0.6,))
    f = fit_joint(data, P, MIXTURE)
    kappa = np.expm1(f.per_obs["omega"])
    w = np.where(data.zero, 1 / (1 + kappa), 1.0)
    assert_allclose(f.per_obs["phi"], 1.0, atol=1e-12)
    assert_allclose(data.Xb.T @ (w * (data.y - np.exp(data.Xb @ f.beta))), 0.0, atol=1e-7)


def test_alpha_block_properties(rng):
    data = simulate_regression(rng, MULTIPLICATIVE, 500)
    beta = np.array([0.45, 0.75])
    a, sep = fit_alpha_given_beta(data, P, MULTIPLICATIVE, beta, [0.0])
    assert not sep
    pit0 = expit(a[0] + logit(np.exp(-np.exp(data.Xb @ beta))))
    assert (data.zero - pit0).sum() == pytest.approx(0.0, abs=1e-8)
    a, _ = fit_alpha_given_beta(data, P, HURDLE, beta, [0.0])
    assert a[0] == pytest.approx(logit(data.n0 / data.n), abs=1e-10)


def test_iid_regression_consistency():
    data = Dataset(WORKED, np.ones((10, 1)), np.ones((10, 1)))
    for zt in TYPES:
        f, g = fit_joint(data, P, zt), fit_iid(P, zt, WORKED)
        assert_allclose(f.beta, g.beta, atol=1e-8)
        assert_allclose(f.alpha, g.alpha, atol=1e-8)


def _nm_mixture_alpha(data, beta, a0):
    def nll(a):
        return -regression_loglik(data, P, MIXTURE, beta, a)

    res = optimize.minimize(nll, a0, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000})
    return -res.fun


def test_mixture_em_matches_derivative_free(rng):
    data = simulate_regression(rng, MIXTURE, 500, alpha=(0.5, 1.0))
    beta = np.array([0.5, 0.8])
    a, _ = fit_mixture_alpha(data, P, beta, np.zeros(2))
    ll = regression_loglik(data, P, MIXTURE, beta, a)
    assert ll == pytest.approx(_nm_mixture_alpha(data, beta, np.zeros(2)), abs=1e-6)
    assert_allclose(regression_score(data, P, MIXTURE, beta, a)[2:], 0.0, atol=1e-6)


def test_mixture_recovers_truth(rng):
    data = simulate_regression(rng, MIXTURE, 2000, alpha=(0.6,))
    f = fit_joint(data, P, MIXTURE)
    truth = np.array([0.5, 0.8, 0.6])
    assert np.all(np.abs(f.params - truth) <= 3 * f.se)


def test_mixture_rejects_deflation():
    # one zero among counts averaging 3: fewer zeros than a Poisson allows
    y = np.array([0] + [2, 3, 4, 3, 2, 5, 3, 4, 2, 3] * 3)
    assert fit_iid(P, ADDITIVE, y).per_obs["omega"][0] < 0
    with pytest.raises(DomainError, match="tau-family"):
        fit_iid(P, MIXTURE, y)


def test_estimate_tau_iid_not_identifiable():
    data = Dataset(WORKED, np.ones((10, 1)), np.ones((10, 1)))
    with pytest.raises(TypeNotIdentifiable, match="not identifiable"):
        estimate_tau(data, P, [0.1])


def test_estimate_tau_on_hurdle_data(rng):
    data = simulate_regression(rng, HURDLE, 3000, beta=(0.3, 1.0), alpha=(-0.3,))
    f = fit_joint(data, P, "estimate-tau")
    assert f.converged and f.tau_estimated and f.k == 5
    t = np.array(f.tau) - (-1.0, 1.0)
    cov = f.cov[-2:, -2:]
    assert t @ np.linalg.solve(cov, t) <= 13.8  # chi2_2 99.9%
    assert f.type_name == "estimate-tau"


def test_logistic_irls_matches_oracle(rng):
    n = 300
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    off = rng.normal(size=n) * 0.3
    z = rng.uniform(size=n) < expit(-0.2 + 0.7 * X[:, 1] + off)
    a, _ = logistic_irls(X, z, off)
    sol = optimize.root(lambda b: X.T @ (z - expit(off + X @ b)), np.zeros(2), tol=1e-14)
    assert_allclose(a, sol.x, atol=1e-9)


# -- joint -----------------------------------------------------------------------


@pytest.mark.parametrize("zt", TYPES)
def test_joint_fit_certificates(zt, rng):
    data = simulate_regression(rng, zt, 800, alpha=(0.4, 0.5))
    f = fit_joint(data, P, zt)
    assert f.converged
    assert f.score_norm <= 1e-8
    assert f.loglik == pytest.approx(float(np.sum(zi_log_pmf(
        ZiModel(P, zt, data.Xb @ f.beta, data.Xa @ f.alpha), data.y))), abs=1e-12)
    assert np.all(np.diff(f.trace) >= -1e-9 * (1 + abs(f.loglik)))
    assert f.ess > 0
    assert f.cov.shape == (4, 4)
    assert np.all(np.linalg.eigvalsh(f.cov) > 0)


@pytest.mark.parametrize("zt", [MULTIPLICATIVE, HURDLE, MIXTURE])
def test_affine_rescaling_invariance(zt, rng):
    data = simulate_regression(rng, zt, 600, alpha=(0.4, 0.5))
    f = fit_joint(data, P, zt)
    a, c = 3.0, -1.5
    Xb = data.Xb.copy()
    Xb[:, 1] = a * Xb[:, 1] + c
    Xa = data.Xa.copy()
    Xa[:, 1] = a * Xa[:, 1] + c
    g = fit_joint(Dataset(data.y, Xb, Xa), P, zt)
    back_beta = np.array([g.beta[0] + c * g.beta[1], a * g.beta[1]])
    back_alpha = np.array([g.alpha[0] + c * g.alpha[1], a * g.alpha[1]])
    assert_allclose(back_beta, f.beta, atol=1e-6)
    assert_allclose(back_alpha, f.alpha, atol=1e-6)


def test_empty_alpha_design_is_glm(rng):
    data = simulate_regression(rng, MULTIPLICATIVE, 300, alpha=(0.0,))
    data = Dataset(data.y, data.Xb, np.zeros((data.n, 0)))
    f = fit_joint(data, P, HURDLE)
    assert_allclose(f.beta, _glm_oracle(data.Xb, data.y), atol=1e-8)
    assert f.k == 2


def test_no_zero_data_reports_null(rng):
    n = 100
    x = rng.normal(size=n)
    y = rng.poisson(np.exp(2.5 + 0.2 * x)) + 1
    data = Dataset(y, np.column_stack([np.ones(n), x]), np.ones((n, 1)))
    f = fit_joint(data, P, MULTIPLICATIVE)
    assert f.omega_unidentified and f.converged
    assert np.isnan(f.alpha[0])
    assert_allclose(f.beta, _glm_oracle(data.Xb, y.astype(float)), atol=1e-8)


def test_all_zero_data_raises():
    data = Dataset(np.zeros(10, int), np.ones((10, 1)), np.ones((10, 1)))
    with pytest.raises(DataError):
        fit_joint(data, P, MULTIPLICATIVE)


def test_non_monotone_type_refused(rng):
    data = simulate_regression(rng, MULTIPLICATIVE, 100)
    with pytest.raises(NonMonotoneTypeError, match="not monotone"):
        fit_joint(data, P, ZiType.custom(-2.0, 0.0))
    with pytest.raises(NonMonotoneTypeError):
        fit_beta_given_alpha(data, P, ZiType.custom(0.0, 2.0), [0.0], np.zeros(2))


def test_custom_type_with_negative_phi_fits(rng):
    zt = ZiType.custom(0.0, -1.0)
    data = simulate_regression(rng, zt, 800, beta=(0.2, 0.6), alpha=(0.5,))
    f = fit_joint(data, P, zt)
    assert f.converged and f.score_norm <= 1e-8


def test_binomial_base(rng):
    base = BaseCount.binomial(10)
    data = simulate_regression(rng, ADDITIVE, 800, beta=(-0.6, 0.5), alpha=(0.3,), base=base)
    f = fit_joint(data, base, ADDITIVE)
    assert f.converged
    assert np.all(np.abs(f.params - [-0.6, 0.5, 0.3]) <= 4 * f.se)


def test_iteration_cap(monkeypatch, rng):
    data = simulate_regression(rng, MULTIPLICATIVE, 500, alpha=(0.4, 0.5))
    monkeypatch.setenv("ZINFER_MAX_ITER", "1")
    assert FitOptions.from_env().max_outer == 1
    f = fit_joint(data, P, MIXTURE)
    assert f.iterations == 1
    assert not f.converged


def test_separation_is_flagged(rng):
    n = 200
    x = rng.normal(size=n)
    z = (np.arange(n) % 2).astype(float)
    y = np.where(z == 1, 0, rng.poisson(3.0, size=n) + 1)
    data = Dataset(y, np.column_stack([np.ones(n), x]), np.column_stack([np.ones(n), z]))
    f = fit_joint(data, P, HURDLE, FitOptions(max_outer=20))
    assert f.separation
