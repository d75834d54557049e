import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from findworld import glm
from findworld.errors import GlmError, RankDeficientError


# Reference values from an independent GLM implementation (statsmodels 0.14,
# tol=1e-14) on data/compas.csv, all 7214 rows:
# two_year_recid ~ gender + age + priors_count + charge_degree (logit)
COMPAS_LOGIT_COEF = [0.7066484989090714, 0.3031581311725589, -0.04690476227989523, 0.15402349064670706,
                     -0.1776380888425334]
COMPAS_LOGIT_SE = [0.09806877673468785, 0.06565799589558752, 0.0024230488777201944, 0.006763790423721235,
                   0.05422485176185315]
COMPAS_LOGIT_LLF = -4430.4448635927365
# priors_count ~ gender + age (Poisson)
COMPAS_POISSON_COEF = [0.2657592107374465, 0.49956991126997896, 0.01552672957724897]
COMPAS_POISSON_SE = [0.025401901197700995, 0.018976217890742067, 0.0004903125656680011]


# ---- independent oracles (no code shared with findworld.glm) ----

def loglik(family, X, y, beta):
    eta = X @ beta
    if family == "bernoulli":
        return np.sum(y * eta - np.log(1 + np.exp(eta)))
    if family == "poisson":
        return np.sum(y * eta - np.exp(eta))
    return -0.5 * np.sum((y - eta) ** 2)


def newton_oracle(family, X, y, tol=1e-13):
    beta = np.zeros(X.shape[1])
    if family == "poisson":
        beta[0] = math.log(max(y.mean(), 1e-3))
    for _ in range(200):
        eta = X @ beta
        mu = 1 / (1 + np.exp(-eta)) if family == "bernoulli" else np.exp(eta)
        w = mu * (1 - mu) if family == "bernoulli" else mu
        grad = X.T @ (y - mu)
        hess = X.T @ (X * w[:, None])
        step = np.linalg.solve(hess, grad)
        t = 1.0
        while loglik(family, X, y, beta + t * step) < loglik(family, X, y, beta) - 1e-12 and t > 1e-8:
            t /= 2
        beta = beta + t * step
        if np.max(np.abs(grad)) < tol:
            break
    return beta


def ols_oracle(X, y):
    return np.linalg.solve(X.T @ X, X.T @ y)


def complex_step_score(family, X, y, beta, h=1e-30):
    """Gradient of the log-likelihood by complex-step differentiation."""
    g = np.empty(len(beta))
    for j in range(len(beta)):
        b = beta.astype(complex)
        b[j] += 1j * h
        g[j] = loglik(family, X, y, b).imag / h
    return g


def random_instance(family, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(30, 90))
    p = int(rng.integers(1, 4))
    F = rng.normal(size=(n, p))
    beta = rng.normal(scale=0.5, size=p + 1)
    eta = beta[0] + F @ beta[1:]
    if family == "gaussian":
        y = eta + rng.normal(size=n)
    elif family == "bernoulli":
        y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    else:
        y = rng.poisson(np.exp(eta)).astype(float)
    return F, y


@pytest.mark.parametrize("family", ["gaussian", "bernoulli", "poisson"])
@pytest.mark.parametrize("seed", range(20))
def test_matches_independent_oracle(family, seed):
    F, y = random_instance(family, 1000 * seed + len(family))
    X = np.column_stack([np.ones(len(y)), F])
    fit = glm.fit(family, F, y)
    assert fit.converged
    want = ols_oracle(X, y) if family == "gaussian" else newton_oracle(family, X, y)
    np.testing.assert_allclose(fit.coefficients, want, atol=1e-8 if family == "gaussian" else 1e-6, rtol=0)
    # score at the returned solution, evaluated independently
    score = complex_step_score(family, X, y, fit.coefficients)
    assert np.max(np.abs(score)) <= 1e-8
    assert fit.score_max <= 1e-8


def test_exact_line():
    fit = glm.fit("gaussian", [1, 2, 3], [1, 2, 3])
    np.testing.assert_allclose(fit.coefficients, [0, 1], atol=1e-12)
    assert fit.dispersion == pytest.approx(0.0, abs=1e-20)


def test_poisson_intercept_only():
    fit = glm.fit("poisson", np.zeros((3, 0)), [1, 2, 3])
    assert fit.coefficients[0] == pytest.approx(math.log(2), abs=1e-10)


def test_compas_logit_against_reference(compas_config):
    from findworld.data import FeatureEncoder
    from findworld.pipeline import load_dataset

    d = load_dataset(compas_config)
    enc = FeatureEncoder.fit(d, ["gender", "age", "priors_count", "charge_degree"])
    fit = glm.fit("bernoulli", enc.transform(d), d["two_year_recid"], feature_names=enc.names)
    assert fit.converged
    np.testing.assert_allclose(fit.coefficients, COMPAS_LOGIT_COEF, rtol=1e-7)
    np.testing.assert_allclose(fit.standard_errors, COMPAS_LOGIT_SE, rtol=1e-6)
    assert fit.log_likelihood == pytest.approx(COMPAS_LOGIT_LLF, rel=1e-10)
    pfit = glm.fit("poisson", enc.transform(d)[:, :2], d["priors_count"])
    np.testing.assert_allclose(pfit.coefficients, COMPAS_POISSON_COEF, rtol=1e-7)
    np.testing.assert_allclose(pfit.standard_errors, COMPAS_POISSON_SE, rtol=1e-6)


def test_gaussian_dispersion_and_se():
    rng = np.random.default_rng(3)
    F = rng.normal(size=(50, 2))
    y = 1 + F @ [2, -1] + rng.normal(scale=0.5, size=50)
    fit = glm.fit("gaussian", F, y)
    X = np.column_stack([np.ones(50), F])
    resid = y - X @ fit.coefficients
    s2 = resid @ resid / (50 - 3)
    assert fit.dispersion == pytest.approx(s2, rel=1e-12)
    np.testing.assert_allclose(fit.standard_errors, np.sqrt(np.diag(s2 * np.linalg.inv(X.T @ X))), rtol=1e-9)


def test_rank_deficient_names_columns():
    rng = np.random.default_rng(0)
    a = rng.normal(size=20)
    F = np.column_stack([a, 2 * a, rng.normal(size=20)])
    with pytest.raises(RankDeficientError) as info:
        glm.fit("gaussian", F, rng.normal(size=20), feature_names=["a", "a2", "b"])
    assert set(info.value.columns) & {"a", "a2"}
    fit = glm.fit("gaussian", F, rng.normal(size=20), feature_names=["a", "a2", "b"], ridge_fallback=True)
    assert any("ridge" in d for d in fit.diagnostics)


def test_separation_reported():
    x = np.arange(-5.0, 5.0)
    y = (x > 0).astype(float)
    fit = glm.fit("bernoulli", x, y)
    assert not fit.converged
    assert any("separation" in d for d in fit.diagnostics)


def test_bad_inputs():
    with pytest.raises(GlmError, match="more rows"):
        glm.fit("gaussian", [[1.0, 2.0]], [1.0])
    with pytest.raises(GlmError, match="0/1"):
        glm.fit("bernoulli", [1, 2, 3], [0, 2, 1])
    with pytest.raises(GlmError, match="non-negative integers"):
        glm.fit("poisson", [1, 2, 3], [0, 1.5, 1])


def _fit(family, coefs, dispersion=1.0):
    coefs = np.asarray(coefs, dtype=float)
    return glm.GlmFit(family, coefs, np.zeros_like(coefs), dispersion, True, 1, 0.0,
                      tuple(f"x{j}" for j in range(len(coefs) - 1)))


def test_predict_mean_examples():
    assert glm.predict_mean(_fit("bernoulli", [0, 0]), [3.7]) == 0.5
    assert glm.predict_mean(_fit("poisson", [math.log(2), 0]), [1.2]) == pytest.approx(2.0)
    assert glm.predict_mean(_fit("gaussian", [1, 2]), [3]) == 7
    with pytest.raises(GlmError, match="expected 1 features"):
        glm.predict_mean(_fit("gaussian", [1, 2]), [3, 4])


def test_cdf_quantile_examples():
    assert glm.cdf_at(_fit("gaussian", [0]), np.zeros(0), 0.0) == 0.5
    # Poisson(2): P(0)+P(1) = 3e^-2 = 0.406 < 0.5 <= 5e^-2 = 0.677, so the median is 2
    assert glm.quantile_at(_fit("poisson", [math.log(2)]), np.zeros(0), 0.5) == 2
    assert glm.cdf_at(_fit("bernoulli", [math.log(0.2 / 0.8)]), np.zeros(0), 0) == pytest.approx(0.8)
    for u in (0.0, 1.0, -0.1):
        with pytest.raises(GlmError):
            glm.quantile_at(_fit("gaussian", [0]), np.zeros(0), u)


@settings(max_examples=150, deadline=None)
@given(mean=st.floats(0.01, 40), v=st.integers(0, 80))
def test_poisson_generalized_inverse(mean, v):
    c = float(glm.distribution_cdf("poisson", mean, v))
    if 0 < c < 1:
        q = glm.distribution_quantile("poisson", mean, c)
        assert q <= v
        if v > 0:
            assert glm.distribution_cdf("poisson", mean, q - 1) < c


@settings(max_examples=150, deadline=None)
@given(p=st.floats(0.001, 0.999), u=st.floats(1e-9, 1 - 1e-9))
def test_bernoulli_quantile_is_generalized_inverse(p, u):
    q = glm.distribution_quantile("bernoulli", p, u)
    assert glm.distribution_cdf("bernoulli", p, q) >= u
    if q == 1:
        assert glm.distribution_cdf("bernoulli", p, 0) < u


@settings(max_examples=100, deadline=None)
@given(mean=st.floats(-5, 5), sd=st.floats(0.1, 5), v=st.floats(-10, 10))
def test_gaussian_quantile_inverts_cdf(mean, sd, v):
    c = float(glm.distribution_cdf("gaussian", mean, v, sd**2))
    if 1e-12 < c < 1 - 1e-12:
        assert glm.distribution_quantile("gaussian", mean, c, sd**2) == pytest.approx(v, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(family=st.sampled_from(["gaussian", "bernoulli", "poisson"]), mean=st.floats(0.05, 0.95),
       a=st.floats(-3, 30), b=st.floats(-3, 30))
def test_cdf_monotone(family, mean, a, b):
    lo, hi = sorted((a, b))
    assert glm.distribution_cdf(family, mean, lo) <= glm.distribution_cdf(family, mean, hi)


def test_serialisation_roundtrip():
    fit = glm.fit("poisson", [[0.1], [0.5], [0.9], [1.3]], [0, 1, 1, 3], feature_names=["x"])
    back = glm.GlmFit.from_dict(fit.to_dict())
    assert np.array_equal(back.coefficients, fit.coefficients)
    assert back.feature_names == ("x",)
