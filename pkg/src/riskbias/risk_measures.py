"""VaR, ES and expectile VaR: true, plug-in, empirical and closed-form unbiased estimators.

Capital is reported as a plain float (positive means money must be added).
The vectorized helpers ``gaussian_capital`` and ``gpd_capital`` accept arrays
of fitted parameters and are what the rolling backtests call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special, stats

from .distributions import (
    Garch11,
    GpdLeftTail,
    Normal,
    StudentT,
    dist_mean,
    dist_quantile,
    partial_moment,
)
from .errors import (
    ConfigurationError,
    DomainError,
    EmptyTailError,
    FitFailureError,
    InfiniteMomentError,
    InfiniteRiskError,
    UnsupportedLawError,
)
from .estimators import GarchFit, GaussianFit, GpdFit, StudentTFit, empirical_quantile

__all__ = [
    "RiskSpec",
    "RISK_KINDS",
    "risk_true",
    "risk_plugin",
    "var_unbiased_gaussian",
    "es_unbiased_gaussian",
    "var_unbiased_pareto",
    "pareto_adjusted_level",
    "risk_empirical",
    "expectile_solve",
    "expectile_laws",
    "gaussian_capital",
    "gpd_capital",
    "gpd_quantile_factor",
    "standard_expectile",
    "PINNED_ES_CONSTANTS",
]

RISK_KINDS = ("VaR", "ES", "EVaR")

# c_n multipliers for the unbiased Gaussian ES estimator that are fixed by
# published tables; other (n, alpha) pairs are solved numerically.
PINNED_ES_CONSTANTS = {(250, 0.025): 1.0077}


@dataclass(frozen=True)
class RiskSpec:
    """Risk family and level.  ``conditional`` marks a level already divided by
    the GPD tail mass p (alpha tilde = alpha / p)."""

    kind: str
    level: float
    conditional: bool = False

    def __post_init__(self):
        if self.kind not in RISK_KINDS:
            raise ConfigurationError(f"unknown risk kind {self.kind!r}")
        if not 0 < self.level < 1:
            raise DomainError("risk level must lie in (0, 1)")

    def tail_level(self, law) -> float:
        """Level to use on the conditional GPD tail law."""
        if isinstance(law, GpdLeftTail) and not self.conditional:
            lvl = self.level / law.p
            if lvl >= 1:
                raise DomainError(f"level {self.level} exceeds tail mass p={law.p}")
            return lvl
        return self.level


# -- closed forms ---------------------------------------------------------------

def gaussian_capital(mu, sigma, kind: str, level: float):
    """Capital of N(mu, sigma^2) for VaR / ES / EVaR (array friendly)."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if kind == "VaR":
        return -(mu + sigma * special.ndtri(level))
    if kind == "ES":
        z = special.ndtri(level)
        return -mu + sigma * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi) / level
    return -(mu + sigma * standard_expectile("normal", level))


def gpd_quantile_factor(xi, level):
    """(level^-xi - 1)/xi with the xi -> 0 limit -log(level)."""
    xi = np.asarray(xi, dtype=float)
    lg = math.log(level)
    small = np.abs(xi) < 1e-12
    safe = np.where(small, 1.0, xi)
    return np.where(small, -lg, np.expm1(-safe * lg) / safe)


def gpd_capital(u, xi, beta, kind: str, level: float):
    """VaR or ES of the conditional left tail X = u - Z, Z ~ GPD(xi, beta).

    ES entries with xi >= 1 are +inf.
    """
    xi = np.asarray(xi, dtype=float)
    beta = np.asarray(beta, dtype=float)
    var = -u + beta * gpd_quantile_factor(xi, level)
    if kind == "VaR":
        return var
    if kind == "ES":
        with np.errstate(divide="ignore", invalid="ignore"):
            es = var / (1.0 - xi) + (beta + xi * u) / (1.0 - xi)
        return np.where(xi < 1, es, np.inf)
    raise ConfigurationError("GPD capital is defined for VaR and ES only; use expectile_solve for EVaR")


_EXPECTILE_CACHE: dict = {}


def standard_expectile(family: str, level: float, nu: float | None = None) -> float:
    """Expectile of the standard normal (``family='normal'``) or standard t_nu."""
    key = (family, level, nu)
    if key not in _EXPECTILE_CACHE:
        law = Normal(0.0, 1.0) if family == "normal" else StudentT(nu, 0.0, 1.0)
        _EXPECTILE_CACHE[key] = expectile_solve(law, level)
    return _EXPECTILE_CACHE[key]


# -- expectiles -----------------------------------------------------------------

def expectile_solve(spec, alpha: float, tol: float = 1e-10) -> float:
    """Root e of alpha E[(X-e)_+] = (1-alpha) E[(e-X)_+]; EVaR capital is -e.

    Bracketing (Brent) followed by Newton polishing on the partial moments.
    GPD laws use the conditional tail law.
    """
    if isinstance(spec, Garch11):
        raise UnsupportedLawError("expectiles need an i.i.d. law")
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    mean = dist_mean(spec, conditional=True)  # raises InfiniteMomentError

    def g(e):
        return float(alpha * partial_moment(spec, e, "above") - (1 - alpha) * partial_moment(spec, e, "below"))

    if alpha == 0.5:
        return mean
    scale = _spread(spec)
    step = scale
    lo, hi = mean - step, mean + step
    while g(lo) < 0:
        step *= 2
        lo = mean - step
    while g(hi) > 0:
        step *= 2
        hi = mean + step
    e = optimize.brentq(g, lo, hi, xtol=tol * max(1.0, scale), rtol=4 * np.finfo(float).eps, maxiter=500)
    for _ in range(3):
        cdf = _cdf_tail(spec, e)
        slope = -(alpha * (1 - cdf) + (1 - alpha) * cdf)
        step_n = g(e) / slope
        if not np.isfinite(step_n) or abs(step_n) < tol * 1e-3:
            break
        e -= step_n
    return float(e)


def _spread(spec) -> float:
    if isinstance(spec, Normal):
        return spec.sigma
    if isinstance(spec, StudentT):
        return spec.scale
    return spec.beta


def _cdf_tail(spec, x):
    from .distributions import dist_cdf

    return float(dist_cdf(spec, x, conditional=True) if isinstance(spec, GpdLeftTail) else dist_cdf(spec, x))


def expectile_laws(sample, alpha: float, tol: float = 1e-9, max_iter: int = 200, axis: int = -1):
    """Sample expectile via LAWS (iteratively reweighted asymmetric least squares).

    Fixed point e = sum(w x) / sum(w) with w = alpha where x > e and 1 - alpha
    elsewhere.  Works row-wise on 2-d input.
    """
    x = np.moveaxis(np.asarray(sample, dtype=float), axis, -1)
    e = x.mean(axis=-1)
    for _ in range(max_iter):
        w = np.where(x > e[..., None], alpha, 1.0 - alpha)
        new = (w * x).sum(axis=-1) / w.sum(axis=-1)
        done = np.abs(new - e) <= tol * (1.0 + np.abs(e))
        e = new
        if np.all(done):
            return e
    raise FitFailureError("LAWS expectile iteration did not converge")


# -- true and plug-in risk ---------------------------------------------------------

def risk_true(spec, risk: RiskSpec, sigma_t=None):
    """Risk of the generating law; GARCH laws need the conditional sigma_t."""
    kind = risk.kind
    if isinstance(spec, Garch11):
        if sigma_t is None:
            raise ConfigurationError("GARCH true risk needs the conditional sigma_t")
        if kind == "EVaR":
            return -(spec.mu + np.asarray(sigma_t) * standard_expectile("normal", risk.level))
        return gaussian_capital(spec.mu, sigma_t, kind, risk.level)[()]
    if isinstance(spec, Normal):
        return float(gaussian_capital(spec.mu, spec.sigma, kind, risk.level))
    if isinstance(spec, StudentT):
        if kind == "VaR":
            return float(-dist_quantile(spec, risk.level))
        if kind == "ES":
            if spec.nu <= 1:
                raise InfiniteRiskError("t law with nu <= 1 has infinite ES")
            nu, q = spec.nu, stats.t.ppf(risk.level, spec.nu)
            tail = stats.t.pdf(q, nu) * (nu + q * q) / (nu - 1) / risk.level
            return float(-spec.loc + spec.scale * tail)
        return float(-expectile_solve(spec, risk.level))
    if isinstance(spec, GpdLeftTail):
        level = risk.tail_level(spec)
        if kind == "EVaR":
            return float(-expectile_solve(spec, level))
        if kind == "ES" and spec.xi >= 1:
            raise InfiniteRiskError(f"GPD expected shortfall is infinite for xi={spec.xi}")
        return float(gpd_capital(spec.u, spec.xi, spec.beta, kind, level))
    raise UnsupportedLawError(f"unknown law {spec!r}")


def risk_plugin(fit, risk: RiskSpec, p: float | None = None):
    """True-risk formula evaluated at fitted parameters (GPD threshold kept fixed).

    For GPD fits the level is used as the conditional tail level unless ``p``
    is given and ``risk.conditional`` is False.
    """
    kind = risk.kind
    if isinstance(fit, GaussianFit):
        return float(gaussian_capital(fit.mu_hat, fit.sigma_hat, kind, risk.level))
    if isinstance(fit, StudentTFit):
        return risk_true(StudentT(fit.nu, fit.loc, fit.scale), risk)
    if isinstance(fit, GarchFit):
        return float(gaussian_capital(fit.mu_hat, fit.sigma_next, kind, risk.level)) if kind != "EVaR" else float(
            -(fit.mu_hat + fit.sigma_next * standard_expectile("normal", risk.level)))
    if isinstance(fit, GpdFit):
        level = risk.level if (risk.conditional or p is None) else risk.level / p
        if kind == "EVaR":
            return float(-expectile_solve(GpdLeftTail(fit.u, fit.xi_hat, fit.beta_hat), level))
        if kind == "ES" and fit.xi_hat >= 1:
            raise InfiniteRiskError(f"plug-in ES is infinite for xi_hat={fit.xi_hat}")
        return float(gpd_capital(fit.u, fit.xi_hat, fit.beta_hat, kind, level))
    raise UnsupportedLawError(f"no plug-in rule for {type(fit).__name__}")


# -- closed-form unbiased estimators --------------------------------------------------

def var_unbiased_gaussian(fit: GaussianFit, alpha: float) -> float:
    """-(mu_hat + sigma_hat sqrt((n+1)/n) t_{n-1}^{-1}(alpha))."""
    n = fit.n
    if n < 2:
        raise DomainError("n must be >= 2")
    return float(-(fit.mu_hat + fit.sigma_hat * math.sqrt((n + 1) / n) * stats.t.ppf(alpha, n - 1)))


def es_unbiased_gaussian(fit: GaussianFit, alpha: float, c: float | None = None) -> float:
    """-mu_hat + c_n sigma_hat phi(Phi^{-1}(alpha)) / alpha.

    ``c`` defaults to the pinned table value when one exists, otherwise it is
    solved from the unbiasedness condition (see
    :func:`riskbias.bias_reduction.gaussian_es_constant`).
    """
    if fit.n < 2:
        raise DomainError("n must be >= 2")
    if c is None:
        c = PINNED_ES_CONSTANTS.get((fit.n, alpha))
    if c is None:
        from .bias_reduction import gaussian_es_constant

        c = gaussian_es_constant(fit.n, alpha)
    return float(gaussian_capital(fit.mu_hat, c * fit.sigma_hat, "ES", alpha))


def pareto_adjusted_level(n: int, p: float) -> float:
    """p* = 1 - exp(-n((1-p)^(-1/n) - 1))."""
    if not 0 < p < 1 or n < 1:
        raise DomainError("need p in (0, 1) and n >= 1")
    return -math.expm1(-n * math.expm1(-math.log1p(-p) / n))


def var_unbiased_pareto(mu_hat: float, n: int, p: float) -> float:
    """-mu_hat log(1 - p*) with the inflated level p*."""
    if mu_hat <= 0:
        raise DomainError("mu_hat must be > 0")
    return -mu_hat * math.log1p(-pareto_adjusted_level(n, p))


# -- empirical estimators -----------------------------------------------------------

def risk_empirical(window, risk: RiskSpec, method: str = "interpolated", axis: int = -1):
    """Empirical VaR / ES / EVaR of a window (or of each row of a 2-d block).

    ES averages the window values at or below the empirical VaR quantile.
    EVaR is the negated LAWS expectile.
    """
    x = np.asarray(window, dtype=float)
    if x.shape[axis] == 0:
        raise DomainError("empty window")
    if risk.kind == "EVaR":
        out = -expectile_laws(x, risk.level, axis=axis)
        return float(out) if np.ndim(out) == 0 else out
    q = empirical_quantile(x, risk.level, method=method, axis=axis)
    if risk.kind == "VaR":
        out = -q
        return float(out) if np.ndim(out) == 0 else out
    xm = np.moveaxis(x, axis, -1)
    qb = np.asarray(q)[..., None]
    mask = xm <= qb
    count = mask.sum(axis=-1)
    if np.any(count == 0):
        raise EmptyTailError("no window value at or below the empirical VaR")
    out = -(np.where(mask, xm, 0.0).sum(axis=-1) / count)
    return float(out) if np.ndim(out) == 0 else out
