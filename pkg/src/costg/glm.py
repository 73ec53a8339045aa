"""Generalized linear models used throughout the estimation engine.

Four configurations cover every model role: Normal, Gamma, and
Inverse-Gaussian with the identity link for cost and confounder models,
and Bernoulli-logit for death, treatment, censoring, and propensity
models. Fitting is iteratively reweighted least squares with
step-halving to keep identity-link Gamma/Inverse-Gaussian means strictly
positive; dispersion is the Pearson statistic divided by the residual
degrees of freedom.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientDataError,
    NonConvergenceError,
    ResponseDomainError,
    SingularDesignError,
)

__all__ = [
    "FAMILIES",
    "LINKS",
    "GlmSpec",
    "FittedGlm",
    "fit_glm",
    "score_residual_norm",
    "sample_response",
    "predict_mean",
    "expit",
]

FAMILIES = ("normal", "gamma", "inverse_gaussian", "bernoulli")
LINKS = ("identity", "logit")

_POSITIVE_FAMILIES = ("gamma", "inverse_gaussian")

COEF_TOL = 1e-8
SCORE_TOL = 1e-6
MAX_ITER = 50
MAX_HALVINGS = 100


def expit(eta):
    """Numerically safe inverse logit."""
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -36.0, 36.0)))


def _variance(family: str, mu):
    if family == "normal":
        return np.ones_like(mu)
    if family == "gamma":
        return mu * mu
    if family == "inverse_gaussian":
        return mu * mu * mu
    return mu * (1.0 - mu)


@dataclass(frozen=True)
class GlmSpec:
    """Family, link, and named predictor columns for one model."""

    family: str
    link: str
    predictors: tuple[str, ...] = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.link not in LINKS:
            raise ValueError(f"unknown link {self.link!r}")
        if self.family == "bernoulli" and self.link != "logit":
            raise ValueError("bernoulli family requires the logit link")
        if self.family != "bernoulli" and self.link != "identity":
            raise ValueError(f"{self.family} family requires the identity link")
        object.__setattr__(self, "predictors", tuple(self.predictors))


@dataclass(frozen=True)
class FittedGlm:
    """A converged fit: coefficients plus Pearson dispersion.

    For the normal family the dispersion is the residual variance; for
    gamma it estimates 1/shape and for inverse-gaussian 1/lambda.
    """

    family: str
    link: str
    predictors: tuple[str, ...]
    coefficients: np.ndarray = field(repr=False)
    dispersion: float
    n_obs: int
    converged: bool
    iterations: int

    def predict(self, design: np.ndarray) -> np.ndarray:
        """Mean response for each row of ``design``."""
        eta = np.asarray(design, dtype=float) @ self.coefficients
        if self.link == "identity":
            return eta
        return expit(eta)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "link": self.link,
            "predictors": list(self.predictors),
            "coefficients": [float(c) for c in self.coefficients],
            "dispersion": float(self.dispersion),
            "n_obs": int(self.n_obs),
        }


def _check_domain(family: str, y: np.ndarray) -> None:
    if family in _POSITIVE_FAMILIES and np.any(y <= 0.0):
        bad = int(np.count_nonzero(y <= 0.0))
        raise ResponseDomainError(
            f"{family} family requires strictly positive responses "
            f"({bad} non-positive found)"
        )
    if family == "bernoulli" and not np.all((y == 0.0) | (y == 1.0)):
        raise ResponseDomainError("bernoulli family requires 0/1 responses")


def _weighted_solve(x, z, w):
    """Solve the weighted normal equations; designs here have few columns,
    so this beats a QR/SVD solve by an order of magnitude."""
    xw = x * w[:, None]
    gram = xw.T @ x
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > 1e12:
        raise SingularDesignError(
            f"design with {x.shape[1]} columns is rank deficient or "
            "numerically singular"
        )
    return np.linalg.solve(gram, xw.T @ z)


def _initial_coefficients(x, y, w, family):
    """A starting point whose fitted means are valid for the family."""
    beta = _weighted_solve(x, y, w)
    if family not in _POSITIVE_FAMILIES:
        return beta
    if np.all(x @ beta > 0.0):
        return beta
    # Blend toward the projection of the constant mean, which is strictly
    # positive whenever an intercept is in the column span.
    target = np.full(y.shape, y.mean())
    beta_mean = _weighted_solve(x, target, w)
    if np.any(x @ beta_mean <= 0.0):
        raise NonConvergenceError(
            "could not find a positive-mean starting point for "
            f"{family}/identity fit"
        )
    for _ in range(MAX_HALVINGS):
        beta = 0.5 * (beta + beta_mean)
        if np.all(x @ beta > 0.0):
            return beta
    return beta_mean


def _score(x, y, mu, w, family, link):
    v = _variance(family, mu)
    if link == "identity":
        resid = w * (y - mu) / v
    else:  # canonical logit: V * g'(mu) == 1
        resid = w * (y - mu)
    return x.T @ resid


def _pearson_dispersion(x, y, mu, w, family):
    n, p = x.shape
    if family == "bernoulli":
        return 1.0
    pearson = float(np.sum(w * (y - mu) ** 2 / _variance(family, mu)))
    return pearson / (n - p)


def fit_glm(design, response, spec: GlmSpec, weights=None) -> FittedGlm:
    """Fit one GLM by iteratively reweighted least squares.

    Parameters
    ----------
    design : (n, p) array
        Model matrix, including the intercept column.
    response : (n,) array
    spec : GlmSpec
    weights : (n,) array, optional
        Non-negative prior weights.

    Raises
    ------
    SingularDesignError
        If the design is rank deficient.
    NonConvergenceError
        If IRLS fails to converge, including logistic separation.
    ResponseDomainError
        If the response is outside the family's domain.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if x.ndim != 2:
        raise ValueError("design must be a 2-d array")
    n, p = x.shape
    if y.shape != (n,):
        raise ValueError("response length does not match design")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0.0):
            raise ValueError("weights must be non-negative")
        if not np.any(w > 0.0):
            raise ValueError("weights must not be all zero")
    if n <= p:
        raise InsufficientDataError(
            f"need more observations ({n}) than design columns ({p})"
        )
    _check_domain(spec.family, y)

    family, link = spec.family, spec.link
    positive = family in _POSITIVE_FAMILIES

    if link == "identity":
        beta = _initial_coefficients(x, y, w, family)
        mu = x @ beta
    else:
        beta = np.zeros(p)
        mu = np.clip((y + 0.5) / 2.0, 1e-6, 1.0 - 1e-6)

    converged = False
    iterations = 0
    for iterations in range(1, MAX_ITER + 1):
        if link == "identity":
            ww = w / _variance(family, mu)
            z = y
        else:
            mu = np.clip(mu, 1e-10, 1.0 - 1e-10)
            ww = w * mu * (1.0 - mu)
            eta = np.log(mu / (1.0 - mu))
            z = eta + (y - mu) / (mu * (1.0 - mu))
        candidate = _weighted_solve(x, z, ww)
        if positive:
            halvings = 0
            while np.any(x @ candidate <= 0.0):
                candidate = 0.5 * (candidate + beta)
                halvings += 1
                if halvings > MAX_HALVINGS:
                    raise NonConvergenceError(
                        f"{family}/identity step-halving exhausted "
                        f"({MAX_HALVINGS} halvings) without a positive mean",
                        last_coefficients=beta,
                        iterations=iterations,
                    )
        delta = float(np.max(np.abs(candidate - beta)))
        scale = max(1.0, float(np.max(np.abs(beta))))
        beta = candidate
        if link == "identity":
            mu = x @ beta
        else:
            mu = expit(x @ beta)
        score_norm = float(np.max(np.abs(_score(x, y, mu, w, family, link))))
        if delta / scale < COEF_TOL or score_norm <= SCORE_TOL * n:
            converged = True
            break

    # A logistic iterate that strictly classifies every response (all
    # residuals below 0.5) defines a separating hyperplane, so the
    # likelihood has no finite maximum: report separation instead of
    # letting exploded weights poison downstream estimates. A constant
    # response is exempt: the boundary fit (rate ~ 0 or 1) is returned,
    # as there is no covariate hyperplane involved.
    if (
        family == "bernoulli"
        and y.min() != y.max()
        and float(np.max(np.abs(y - mu))) < 0.499
    ):
        raise NonConvergenceError(
            "perfect separation: the fitted model classifies every response",
            last_coefficients=beta,
            iterations=iterations,
        )
    if not converged:
        raise NonConvergenceError(
            f"IRLS did not converge in {MAX_ITER} iterations",
            last_coefficients=beta,
            iterations=iterations,
        )

    return FittedGlm(
        family=family,
        link=link,
        predictors=spec.predictors,
        coefficients=beta,
        dispersion=_pearson_dispersion(x, y, mu, w, family),
        n_obs=n,
        converged=True,
        iterations=iterations,
    )


def score_residual_norm(fit: FittedGlm, design, response, weights=None) -> float:
    """Max-norm of the weighted score vector at the fitted coefficients."""
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    mu = fit.predict(x)
    return float(np.max(np.abs(_score(x, y, mu, w, fit.family, fit.link))))


def _family_name(spec_or_family) -> str:
    if isinstance(spec_or_family, GlmSpec):
        return spec_or_family.family
    return str(spec_or_family)


def _sample_inverse_gaussian(mean, lam, rng):
    # Michael-Schucany-Haas: chi-square transform plus a uniform
    # acceptance split between the two roots.
    nu = rng.standard_normal(mean.shape) ** 2
    root = mean + mean * (mean * nu - np.sqrt(4.0 * lam * mean * nu + (mean * nu) ** 2)) / (
        2.0 * lam
    )
    u = rng.random(mean.shape)
    return np.where(u <= mean / (mean + root), root, mean * mean / root)


def sample_response(spec_or_family, mean, dispersion, rng, size=None):
    """Draw from the family with the given mean and dispersion.

    The variance contract is: ``dispersion`` for normal,
    ``mean**2 * dispersion`` for gamma, ``mean**3 * dispersion`` for
    inverse-gaussian. Bernoulli draws 0/1 with probability ``mean``.
    Vectorized over ``mean``; a scalar mean returns a scalar unless
    ``size`` is given.
    """
    family = _family_name(spec_or_family)
    scalar = np.isscalar(mean) and size is None
    mu = np.atleast_1d(np.asarray(mean, dtype=float))
    if size is not None:
        mu = np.broadcast_to(mu, (int(size),)).copy() if mu.size == 1 else mu
    phi = float(dispersion)

    if family == "bernoulli":
        if np.any((mu < 0.0) | (mu > 1.0)):
            raise ResponseDomainError("bernoulli mean must lie in [0, 1]")
        out = (rng.random(mu.shape) < mu).astype(float)
    elif family == "normal":
        if phi < 0.0:
            raise ResponseDomainError("normal dispersion must be non-negative")
        out = rng.normal(mu, np.sqrt(phi))
    else:
        if np.any(mu <= 0.0):
            raise ResponseDomainError(f"{family} mean must be strictly positive")
        if phi < 0.0:
            raise ResponseDomainError("dispersion must be non-negative")
        if phi == 0.0:
            out = mu.copy()
        elif family == "gamma":
            shape = 1.0 / phi
            out = rng.gamma(shape, mu * phi)
        else:
            out = _sample_inverse_gaussian(mu, 1.0 / phi, rng)
    return float(out[0]) if scalar else out


def predict_mean(fit: FittedGlm, row) -> float:
    """Mean response for a single predictor row."""
    eta = float(np.dot(np.asarray(row, dtype=float), fit.coefficients))
    if fit.link == "identity":
        return eta
    return float(expit(eta))
