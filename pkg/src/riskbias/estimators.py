"""Parameter estimation for every law family feeding the risk estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from .distributions import garch_sigma_recursion
from .errors import DegenerateSampleError, DomainError, FitFailureError, IllPosedFitError

__all__ = [
    "GaussianFit",
    "StudentTFit",
    "GpdFit",
    "GarchFit",
    "fit_gaussian",
    "fit_student_t",
    "fit_gpd_pwm",
    "pwm_batch",
    "fit_garch_qmle",
    "garch_quasi_loglik",
    "empirical_quantile",
    "QUANTILE_METHODS",
]


@dataclass(frozen=True)
class GaussianFit:
    mu_hat: float
    sigma_hat: float
    n: int

    def __post_init__(self):
        if not self.sigma_hat > 0:
            raise DomainError("sigma_hat must be > 0")
        if self.n < 2:
            raise DomainError("GaussianFit needs n >= 2")


@dataclass(frozen=True)
class StudentTFit:
    """Location/scale fit of a Student-t law whose degrees of freedom are known."""

    loc: float
    scale: float
    nu: float
    n: int


@dataclass(frozen=True)
class GpdFit:
    xi_hat: float
    beta_hat: float
    u: float
    n: int

    def __post_init__(self):
        if not self.beta_hat > 0:
            raise DomainError("beta_hat must be > 0")


@dataclass(frozen=True)
class GarchFit:
    mu_hat: float
    omega_hat: float
    alpha_hat: float
    beta_hat: float
    sigma_next: float
    n: int
    loglik: float = float("nan")


def fit_gaussian(sample) -> GaussianFit:
    """Sample mean and the (n-1)-denominator standard deviation."""
    x = np.asarray(sample, dtype=float)
    if x.size < 2:
        raise DomainError("need at least two observations")
    sd = float(np.std(x, ddof=1))
    if sd == 0.0:
        raise DegenerateSampleError("constant sample")
    return GaussianFit(float(np.mean(x)), sd, x.size)


def fit_student_t(sample, nu: float) -> StudentTFit:
    """Moment-matched location and scale for a t law with known ``nu > 2``."""
    if nu <= 2:
        raise DomainError("moment matching needs nu > 2")
    g = fit_gaussian(sample)
    return StudentTFit(g.mu_hat, g.sigma_hat * math.sqrt((nu - 2) / nu), nu, g.n)


def pwm_batch(excesses):
    """Vectorized PWM fits, one per row of ``excesses``.

    Returns ``(xi_hat, beta_hat)`` arrays.  Rows with a non-positive
    denominator ``a0 - 2 a1`` yield NaN.
    """
    z = np.sort(np.atleast_2d(np.asarray(excesses, dtype=float)), axis=1)
    n = z.shape[1]
    if n < 2:
        raise DomainError("PWM needs at least two excesses")
    w = (n - np.arange(1, n + 1)) / (n - 1.0)
    a0 = z.mean(axis=1)
    a1 = (z * w).mean(axis=1)
    den = a0 - 2.0 * a1
    ok = den > 0
    safe = np.where(ok, den, 1.0)
    xi = np.where(ok, 2.0 - a0 / safe, np.nan)
    beta = np.where(ok, 2.0 * a0 * a1 / safe, np.nan)
    return xi, beta


def fit_gpd_pwm(excesses, u: float = 0.0) -> GpdFit:
    """Hosking-Wallis probability-weighted-moment fit of GPD(xi, beta).

    ``excesses`` are the positive distances ``u - x_i`` below the threshold.
    With a0 the mean and a1 = mean(z_(i) (n-i)/(n-1)) over ascending order
    statistics, xi = 2 - a0/(a0 - 2 a1) and beta = 2 a0 a1/(a0 - 2 a1).
    """
    z = np.asarray(excesses, dtype=float).ravel()
    xi, beta = pwm_batch(z[None, :])
    if not np.isfinite(xi[0]) or not beta[0] > 0:
        raise IllPosedFitError("PWM denominator a0 - 2 a1 is not positive")
    return GpdFit(float(xi[0]), float(beta[0]), float(u), z.size)


def garch_quasi_loglik(x, mu, omega, alpha, beta, sigma_init) -> float:
    """Gaussian quasi log-likelihood (up to the constant) of ``x``."""
    x = np.asarray(x, dtype=float)
    s2 = garch_sigma_recursion(x, omega, alpha, beta, sigma_init)[:-1]
    e = x - mu
    return float(-0.5 * np.sum(np.log(s2) + e * e / s2))


def _unpack(theta):
    omega = math.exp(theta[0])
    persistence = expit(theta[1])
    share = expit(theta[2])
    return omega, persistence * share, persistence * (1.0 - share)


def fit_garch_qmle(sample, sigma_init: float | None = None, maxiter: int = 500) -> GarchFit:
    """Quasi-maximum-likelihood GARCH(1,1) fit over one window.

    The mean is the window average; (omega, alpha, beta) are searched by
    Nelder-Mead over (log omega, logit(alpha+beta), logit(alpha/(alpha+beta)))
    so every iterate is stationary.  ``sigma_init`` seeds the variance
    recursion (default: window standard deviation).
    """
    x = np.asarray(sample, dtype=float)
    n = x.size
    if n < 50:
        raise DomainError("GARCH fitting needs at least 50 observations")
    mu = float(x.mean())
    e = x - mu
    v = float(e.var())
    if v <= 0:
        raise DegenerateSampleError("constant sample")
    s0 = math.sqrt(v) if sigma_init is None else float(sigma_init)

    def nll(theta):
        omega, a, b = _unpack(theta)
        s2 = garch_sigma_recursion(x, omega, a, b, s0)[:-1]
        val = 0.5 * np.sum(np.log(s2) + e * e / s2)
        return val if np.isfinite(val) else 1e300

    start = np.array([math.log(0.1 * v), logit(0.9), logit(0.1 / 0.9)])
    res = minimize(nll, start, method="Nelder-Mead",
                   options={"maxiter": maxiter, "xatol": 1e-5, "fatol": 1e-9})
    if not res.success or not np.isfinite(res.fun):
        raise FitFailureError(f"GARCH QMLE did not converge: {res.message}")
    omega, a, b = _unpack(res.x)
    s_next = garch_sigma_recursion(x, omega, a, b, s0)[-1]
    return GarchFit(mu, omega, a, b, math.sqrt(s_next), n, -float(res.fun))


QUANTILE_METHODS = ("order_statistic", "interpolated", "type9")
_NUMPY_METHOD = {"interpolated": "linear", "type9": "normal_unbiased"}


def empirical_quantile(sample, alpha: float, method: str = "order_statistic", axis: int = -1):
    """Empirical alpha-quantile.

    ``order_statistic`` returns x_(floor(n alpha) + 1).  ``interpolated`` is
    the linear plotting-position rule (R's default, type 7); ``type9`` is the
    approximately unbiased normal rule.  Operates along ``axis`` so whole
    blocks of rolling windows can be passed at once.
    """
    x = np.asarray(sample, dtype=float)
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    n = x.shape[axis]
    if method == "order_statistic":
        k = math.floor(n * alpha)
        if k + 1 > n:
            raise DomainError(f"alpha={alpha} too large for n={n}")
        return np.take(np.partition(x, k, axis=axis), k, axis=axis)
    if method not in _NUMPY_METHOD:
        raise DomainError(f"unknown quantile method {method!r}; choose from {QUANTILE_METHODS}")
    return np.quantile(x, alpha, axis=axis, method=_NUMPY_METHOD[method])
