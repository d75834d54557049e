"""Generalized linear models fitted by iteratively reweighted least squares.

Three families with canonical links are supported:

===========  ========  ===================
family       link      variance
===========  ========  ===================
gaussian     identity  dispersion
bernoulli    logit     mu * (1 - mu)
poisson      log       mu
===========  ========  ===================

Besides the mean, fitted models expose the conditional CDF and generalized
quantile function of the response, which the warping code inverts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from scipy import special, stats

from .errors import GlmError, RankDeficientError

log = logging.getLogger(__name__)

FAMILIES = ("gaussian", "bernoulli", "poisson")
INTERCEPT = "(intercept)"
# |eta| beyond this means fitted probabilities/means are numerically 0 or 1
_DIVERGENCE_ETA = 30.0


@dataclass(frozen=True, eq=False)
class GlmFit:
    """Immutable result of :func:`fit`.

    ``coefficients`` and ``standard_errors`` are ordered intercept first,
    then ``feature_names``. ``dispersion`` is the residual variance
    ``RSS / (n - p - 1)`` for gaussian models and 1 otherwise. ``score_max``
    is the max-norm of ``X'(y - mu)`` at the returned coefficients.
    """

    family: str
    coefficients: np.ndarray
    standard_errors: np.ndarray
    dispersion: float
    converged: bool
    iterations: int
    log_likelihood: float
    feature_names: tuple[str, ...] = ()
    n_obs: int = 0
    score_max: float = float("nan")
    diagnostics: tuple[str, ...] = field(default=())

    @property
    def n_features(self) -> int:
        return len(self.coefficients) - 1

    @property
    def names(self) -> list[str]:
        return [INTERCEPT, *self.feature_names]

    def coefficient(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])

    def standard_error(self, name: str) -> float:
        return float(self.standard_errors[self.names.index(name)])

    def with_dispersion(self, dispersion: float) -> "GlmFit":
        return replace(self, dispersion=float(dispersion))

    def to_dict(self):
        return {
            "family": self.family,
            # explicit column order; JSON writers may sort the keys below
            "names": list(self.names),
            "coefficients": dict(zip(self.names, map(float, self.coefficients))),
            "standard_errors": dict(zip(self.names, map(float, self.standard_errors))),
            "dispersion": float(self.dispersion),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "log_likelihood": float(self.log_likelihood),
            "n_obs": int(self.n_obs),
            "score_max": float(self.score_max),
            "diagnostics": list(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, data) -> "GlmFit":
        names = list(data.get("names") or data["coefficients"])
        return cls(
            family=data["family"],
            coefficients=np.array([data["coefficients"][k] for k in names], dtype=float),
            standard_errors=np.array([data["standard_errors"][k] for k in names], dtype=float),
            dispersion=float(data["dispersion"]),
            converged=bool(data["converged"]),
            iterations=int(data["iterations"]),
            log_likelihood=float(data["log_likelihood"]),
            feature_names=tuple(names[1:]),
            n_obs=int(data.get("n_obs", 0)),
            score_max=float(data.get("score_max", float("nan"))),
            diagnostics=tuple(data.get("diagnostics", ())),
        )


def _check_family(family):
    if family not in FAMILIES:
        raise GlmError(f"unknown family {family!r}; expected one of {FAMILIES}")


def inverse_link(family: str, eta):
    if family == "gaussian":
        return eta
    if family == "bernoulli":
        return special.expit(eta)
    return np.exp(eta)


def _variance(family, mu):
    if family == "gaussian":
        return np.ones_like(mu)
    if family == "bernoulli":
        return mu * (1.0 - mu)
    return mu


def _loglik(family, y, eta):
    """Log-likelihood per family (gaussian: profile likelihood at the MLE variance)."""
    if family == "bernoulli":
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    if family == "poisson":
        return float(np.sum(y * eta - np.exp(eta) - special.gammaln(y + 1.0)))
    n = len(y)
    rss = float(np.sum((y - eta) ** 2))
    if rss == 0.0:
        return math.inf
    return -0.5 * n * (math.log(2 * math.pi * rss / n) + 1.0)


def _objective(family, y, eta):
    """Quantity IRLS minimises: RSS/2 (gaussian) or the negative log-likelihood."""
    if family == "gaussian":
        return 0.5 * float(np.sum((y - eta) ** 2))
    return -_loglik(family, y, eta)


def _validate_response(family, y):
    if not np.all(np.isfinite(y)):
        raise GlmError("response contains non-finite values")
    if family == "bernoulli" and np.any((y != 0) & (y != 1)):
        raise GlmError("bernoulli response must be 0/1")
    if family == "poisson" and (np.any(y < 0) or np.any(y != np.round(y))):
        raise GlmError("poisson response must hold non-negative integers")


def design_rank(X: np.ndarray, names):
    """Return (rank, names of dependent columns) via pivoted QR."""
    if X.shape[1] == 0:
        return 0, []
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(X.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > max(tol, 1e-10 * diag[0])))
    return rank, [names[j] for j in sorted(piv[rank:])]


def fit(
    family: str,
    features,
    response,
    *,
    feature_names=None,
    max_iter: int = 100,
    score_tol: float = 1e-8,
    rel_tol: float = 1e-10,
    ridge_fallback: bool = False,
) -> GlmFit:
    """Fit a main-effects GLM with intercept by IRLS.

    Parameters
    ----------
    family : {"gaussian", "bernoulli", "poisson"}
    features : array_like, shape (n, p)
        Design matrix without intercept column.
    response : array_like, shape (n,)
    feature_names : sequence of str, optional
        Names used in diagnostics and serialised output.
    max_iter : int
        IRLS iteration cap.
    score_tol, rel_tol : float
        Convergence requires both ``max|X'(y - mu)| <= score_tol`` and a
        relative objective change below ``rel_tol``.
    ridge_fallback : bool
        On a rank-deficient design, add a ``1e-8`` ridge instead of raising.

    Returns
    -------
    GlmFit
        ``converged`` is False when the iteration cap is hit or coefficients
        diverge (e.g. perfect separation); ``diagnostics`` explains why.

    Raises
    ------
    RankDeficientError
        Design is rank deficient and ``ridge_fallback`` is off.
    GlmError
        Bad shapes, too few rows or a response outside the family support.
    """
    _check_family(family)
    F = np.asarray(features, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    y = np.asarray(response, dtype=np.float64).ravel()
    n, p = F.shape
    if len(y) != n:
        raise GlmError(f"features have {n} rows but response has {len(y)}")
    if n <= p:
        raise GlmError(f"need more rows than features (n={n}, p={p})")
    if not np.all(np.isfinite(F)):
        raise GlmError("features contain non-finite values")
    _validate_response(family, y)
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(p)]
    if len(names) != p:
        raise GlmError(f"{len(names)} feature names for {p} features")

    X = np.column_stack([np.ones(n), F])
    diagnostics = []
    ridge = 0.0
    rank, dependent = design_rank(X, [INTERCEPT, *names])
    if rank < p + 1:
        if not ridge_fallback:
            raise RankDeficientError(
                f"design matrix is rank deficient (rank {rank} < {p + 1}); collinear columns: {dependent}",
                dependent,
            )
        ridge = 1e-8
        diagnostics.append(f"rank deficient (collinear: {dependent}); ridge penalty {ridge:g} applied")

    beta, iterations, converged, reason = _irls(family, X, y, max_iter, score_tol, rel_tol, ridge)
    if reason:
        diagnostics.append(reason)
    eta = X @ beta
    mu = inverse_link(family, eta)
    score = X.T @ (y - mu)
    score_max = float(np.max(np.abs(score)))

    if family == "gaussian":
        rss = float(np.sum((y - mu) ** 2))
        dof = n - p - 1
        dispersion = rss / dof if dof > 0 else 0.0
    else:
        dispersion = 1.0
    w = _variance(family, mu)
    info = (X * w[:, None]).T @ X + ridge * np.eye(p + 1)
    try:
        cov = np.linalg.inv(info) * (dispersion if family == "gaussian" else 1.0)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        se = np.full(p + 1, np.nan)
        diagnostics.append("Fisher information is singular; standard errors unavailable")

    return GlmFit(
        family=family,
        coefficients=beta,
        standard_errors=se,
        dispersion=dispersion,
        converged=converged,
        iterations=iterations,
        log_likelihood=_loglik(family, y, eta),
        feature_names=tuple(names),
        n_obs=n,
        score_max=score_max,
        diagnostics=tuple(diagnostics),
    )


def _wls(X, w, z, ridge):
    sw = np.sqrt(w)
    A = X * sw[:, None]
    b = z * sw
    if ridge:
        k = X.shape[1]
        A = np.vstack([A, math.sqrt(ridge) * np.eye(k)])
        b = np.concatenate([b, np.zeros(k)])
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    return sol


def _irls(family, X, y, max_iter, score_tol, rel_tol, ridge):
    n = len(y)
    if family == "gaussian":
        mu = y.copy()
    elif family == "bernoulli":
        mu = (y + 0.5) / 2.0
    else:
        mu = y + 0.1
    eta = mu if family == "gaussian" else (special.logit(mu) if family == "bernoulli" else np.log(mu))
    w = _variance(family, mu)
    beta = _wls(X, w, eta + (y - mu) / w, ridge)
    obj = _objective(family, y, X @ beta)

    for it in range(1, max_iter + 1):
        eta = X @ beta
        mu = inverse_link(family, eta)
        w = np.maximum(_variance(family, mu), 1e-300)
        candidate = _wls(X, w, eta + (y - mu) / w, ridge)
        new_obj = _objective(family, y, X @ candidate)
        halvings = 0
        while not (math.isfinite(new_obj) and new_obj <= obj + 1e-12 * (abs(obj) + 1.0)):
            if halvings >= 50:
                return beta, it, False, "step halving failed to decrease the objective"
            candidate = 0.5 * (beta + candidate)
            new_obj = _objective(family, y, X @ candidate)
            halvings += 1
        beta_prev, obj_prev = beta, obj
        beta, obj = candidate, new_obj

        eta = X @ beta
        if _diverging(family, eta):
            continue
        score = np.max(np.abs(X.T @ (y - inverse_link(family, eta))))
        rel = abs(obj_prev - obj) / (abs(obj) + 0.1)
        if rel < rel_tol and score <= score_tol:
            return beta, it, True, ""
        if np.array_equal(beta, beta_prev) and score > score_tol:
            return beta, it, False, f"stalled with score max-norm {score:.3g} > {score_tol:g}"

    eta = X @ beta
    if _diverging(family, eta):
        what = "perfect or quasi-perfect separation" if family == "bernoulli" else "means collapsing to zero"
        return beta, max_iter, False, f"coefficients diverging ({what}; max |eta| = {np.max(np.abs(eta)):.1f})"
    return beta, max_iter, False, f"no convergence after {max_iter} iterations (n={n})"


def _diverging(family, eta):
    if family == "bernoulli":
        return bool(np.max(np.abs(eta)) > _DIVERGENCE_ETA)
    if family == "poisson":
        return bool(np.min(eta) < -_DIVERGENCE_ETA)
    return False


def _as_rows(fit_: GlmFit, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != fit_.n_features:
        raise GlmError(f"expected {fit_.n_features} features, got {X.shape[1]}")
    return X, single


def linear_predictor(fit_: GlmFit, x) -> np.ndarray:
    X, single = _as_rows(fit_, x)
    # column-wise accumulation: each row's value is independent of batch size
    eta = np.full(X.shape[0], fit_.coefficients[0])
    for j, b in enumerate(fit_.coefficients[1:]):
        eta = eta + X[:, j] * b
    return eta[0] if single else eta


def predict_mean(fit_: GlmFit, x):
    """Inverse link of the linear predictor for one p-vector or an (m, p) matrix."""
    return inverse_link(fit_.family, linear_predictor(fit_, x))


def distribution_cdf(family: str, mean, value, dispersion=1.0):
    """P(Y <= value) for the family at the given mean(s)."""
    mean = np.asarray(mean, dtype=np.float64)
    value = np.asarray(value, dtype=np.float64)
    if family == "gaussian":
        sd = math.sqrt(dispersion)
        if sd == 0.0:
            return (value >= mean).astype(np.float64)
        return stats.norm.cdf((value - mean) / sd)
    if family == "bernoulli":
        return np.where(value < 0, 0.0, np.where(value < 1, 1.0 - mean, 1.0))
    return np.where(value < 0, 0.0, stats.poisson.cdf(np.floor(value), mean))


def distribution_pmf(family: str, mean, value):
    """Point mass at integer ``value`` (discrete families only)."""
    mean = np.asarray(mean, dtype=np.float64)
    value = np.asarray(value, dtype=np.float64)
    if family == "bernoulli":
        return np.where(value == 1, mean, np.where(value == 0, 1.0 - mean, 0.0))
    if family == "poisson":
        return stats.poisson.pmf(value, mean)
    raise GlmError("pmf is defined for discrete families only")


def distribution_quantile(family: str, mean, u, dispersion=1.0):
    """Generalized inverse: smallest support value v with CDF(v) >= u."""
    mean = np.asarray(mean, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if np.any((u <= 0) | (u >= 1)):
        raise GlmError("quantile level must lie strictly inside (0, 1)")
    if family == "gaussian":
        return mean + math.sqrt(dispersion) * stats.norm.ppf(u)
    if family == "bernoulli":
        return np.where(u <= 1.0 - mean, 0.0, 1.0)
    mean_b, u_b = np.broadcast_arrays(mean, u)
    k = np.maximum(stats.poisson.ppf(u_b, mean_b), 0.0)
    # enforce the generalized-inverse definition against our own cdf
    for _ in range(4):
        down = (k > 0) & (stats.poisson.cdf(k - 1, mean_b) >= u_b)
        up = stats.poisson.cdf(k, mean_b) < u_b
        if not (down.any() or up.any()):
            break
        k = k - down + up
    return k


def cdf_at(fit_: GlmFit, x, value):
    """Conditional CDF of the response at covariates ``x``."""
    return distribution_cdf(fit_.family, predict_mean(fit_, x), value, fit_.dispersion)


def quantile_at(fit_: GlmFit, x, u):
    """Conditional generalized quantile of the response at covariates ``x``."""
    return distribution_quantile(fit_.family, predict_mean(fit_, x), u, fit_.dispersion)
