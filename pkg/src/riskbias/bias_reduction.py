"""Local risk-bias minimization by bootstrap (scale-rescaled plug-in estimators).

For a fitted parameter theta_hat the plug-in capital of a bootstrap replicate
is written as ``base_i + a * slope_i``: ``a`` multiplies the scale parameter
(sigma for the normal law, beta for the GPD) and location/threshold stay
fixed.  The risk of the secured position ``Y = X + rho_a`` under theta_hat is
then a function of ``a`` alone, which is non-increasing, and the adjustment
is its root.

Two ways of forming the law of ``Y`` are offered:

``exact``
    ``F_Y(y) = mean_i F_X(y - rho_i)``, the convolution of the law of ``X``
    with the empirical law of the B replicate estimates.  Smooth in ``a``.
``paired``
    one independent draw of ``X`` per replicate and the empirical risk of
    the B secured values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import optimize, special, stats

from ._parallel import ordered_map
from .distributions import (
    GpdLeftTail,
    Normal,
    RandomStream,
    dist_cdf,
    dist_quantile,
    gpd_ppf,
    partial_moment,
)
from .errors import BracketError, ConfigurationError, DomainError, UnreliableBiasError
from .estimators import GaussianFit, GpdFit, pwm_batch
from .risk_measures import RiskSpec, gpd_quantile_factor, standard_expectile

__all__ = [
    "BiasSearchConfig",
    "LocalAdjustment",
    "Replicates",
    "draw_replicates",
    "secured_risk",
    "secured_breach_probability",
    "risk_bias_at",
    "bootstrap_adjustment",
    "adjusted_estimate",
    "adjustment_grid",
    "GridPoint",
    "AdjustmentTable",
    "gaussian_es_constant",
    "write_heatmap_csv",
]


@dataclass(frozen=True)
class BiasSearchConfig:
    bootstrap_size: int = 50_000
    adjust_set: str = "scale"
    bias_allowance: float = 0.0
    outlier_quantile: float | None = 0.90
    bracket: tuple = (0.5, 3.0)
    root_tol: float = 1e-3
    max_iter: int = 25
    convolution: str = "exact"
    max_drop_fraction: float = 0.05

    def __post_init__(self):
        if self.bootstrap_size < 100:
            raise ConfigurationError("bootstrap_size must be >= 100")
        lo, hi = self.bracket
        if not lo < 1 < hi:
            raise ConfigurationError("bracket must satisfy lower < 1 < upper")
        if self.adjust_set != "scale":
            raise ConfigurationError("only the scale coordinate can be rescaled")
        if self.convolution not in ("exact", "paired"):
            raise ConfigurationError("convolution must be 'exact' or 'paired'")


@dataclass(frozen=True)
class LocalAdjustment:
    a: float
    theta_ref: object
    residual_bias: float
    bootstrap_se: float
    target: float = 0.0
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.a > 0:
            raise DomainError("adjustment must be positive")


@dataclass
class Replicates:
    """Bootstrap replicate capitals ``base + a * slope`` under law ``law``."""

    law: object
    risk: RiskSpec
    level: float
    base: np.ndarray
    slope: np.ndarray
    x_paired: np.ndarray
    dropped: int = 0
    convolution: str = "exact"

    def capital(self, a: float) -> np.ndarray:
        return self.base + a * self.slope

    @property
    def plugin_se(self) -> float:
        cap = self.capital(1.0)
        cap = cap[np.isfinite(cap)]
        return float(np.std(cap, ddof=1))


def _as_law(theta):
    if isinstance(theta, GaussianFit):
        return Normal(theta.mu_hat, theta.sigma_hat)
    if isinstance(theta, GpdFit):
        return GpdLeftTail(theta.u, theta.xi_hat, theta.beta_hat)
    if isinstance(theta, (Normal, GpdLeftTail)):
        return theta
    raise ConfigurationError(f"bootstrap needs a normal or GPD parameter, got {type(theta).__name__}")


def draw_replicates(theta, risk: RiskSpec, n: int, B: int, rng: RandomStream,
                    estimator: str = "plugin", exact_gaussian: bool = True,
                    max_drop_fraction: float = 0.05) -> Replicates:
    """Simulate B samples of size n from theta, refit each, and return the
    replicate capitals.  GPD laws are sampled conditionally below u and the
    risk level is the conditional tail level.

    For the normal law the estimator (mean, sd) has a known sampling law, so
    ``exact_gaussian`` draws it directly (normal mean, scaled chi-square).
    """
    if n < 2:
        raise DomainError("n must be >= 2")
    law = _as_law(theta)
    gen = rng.generator()
    kind = risk.kind
    if isinstance(law, Normal):
        level = risk.level
        if exact_gaussian:
            mu_hat = law.mu + law.sigma * gen.standard_normal(B) / math.sqrt(n)
            sig_hat = law.sigma * np.sqrt(gen.chisquare(n - 1, B) / (n - 1))
        else:
            data = law.mu + law.sigma * gen.standard_normal((B, n))
            mu_hat = data.mean(axis=1)
            sig_hat = data.std(axis=1, ddof=1)
        x_paired = law.mu + law.sigma * gen.standard_normal(B)
        if estimator == "unbiased":
            if kind != "VaR":
                raise ConfigurationError("closed-form unbiased replicates exist for VaR only")
            factor = -math.sqrt((n + 1) / n) * stats.t.ppf(level, n - 1)
        elif kind == "VaR":
            factor = -special.ndtri(level)
        elif kind == "ES":
            z = special.ndtri(level)
            factor = math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi) / level
        else:
            factor = -standard_expectile("normal", level)
        return Replicates(law, risk, level, -mu_hat, factor * sig_hat, x_paired, 0)

    if estimator != "plugin":
        raise ConfigurationError("GPD replicates support the plug-in estimator only")
    if kind not in ("VaR", "ES"):
        raise ConfigurationError("GPD bias search supports VaR and ES")
    level = risk.level if risk.conditional else risk.tail_level(law)
    z = gpd_ppf(gen.random((B, n)), law.xi, law.beta)
    x_paired = law.u - gpd_ppf(gen.random(B), law.xi, law.beta)
    xi_hat, beta_hat = pwm_batch(z)
    ok = np.isfinite(xi_hat)
    dropped = int(B - ok.sum())
    if dropped > max_drop_fraction * B:
        raise UnreliableBiasError(f"{dropped} of {B} replicate fits failed")
    xi_hat, beta_hat, x_paired = xi_hat[ok], beta_hat[ok], x_paired[ok]
    if kind == "VaR":
        slope = beta_hat * gpd_quantile_factor(xi_hat, level)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = np.where(xi_hat < 1,
                             beta_hat * (gpd_quantile_factor(xi_hat, level) + 1.0) / (1.0 - xi_hat),
                             np.inf)
    base = np.full(slope.shape, -law.u)
    return Replicates(law, risk, level, base, slope, x_paired, dropped)


# -- risk of the secured position ---------------------------------------------------

def _x_cdf(law, s):
    return dist_cdf(law, s, conditional=True)


def _mixture_quantile(law, shifts, level):
    """q with mean_i F_X(q - shift_i) = level."""
    finite = shifts[np.isfinite(shifts)]
    if finite.size == 0:
        return -np.inf
    qx = float(dist_quantile(law, level, conditional=True))
    lo, hi = qx + finite.min(), qx + finite.max()
    if lo == hi:
        return lo

    def f(q):
        return float(np.mean(_x_cdf(law, q - shifts))) - level

    flo = f(lo)
    if flo >= 0:
        return lo
    if f(hi) < 0:
        return hi  # mass at +inf leaves the level unreachable
    return optimize.brentq(f, lo, hi, xtol=1e-12 * max(1.0, abs(hi) + abs(lo)), maxiter=200)


def secured_risk(rep: Replicates, a: float) -> float:
    """Risk R(F(X + rho_a)) of the secured position under the replicate law."""
    cap = rep.capital(a)
    kind, level, law = rep.risk.kind, rep.level, rep.law
    if rep.convolution == "paired":
        y = np.sort(rep.x_paired + cap)
        k = math.floor(y.size * level)
        if kind == "VaR":
            return float(-y[k])
        if kind == "ES":
            return float(-np.mean(y[: k + 1]))
        from .risk_measures import expectile_laws

        return float(-expectile_laws(y[np.isfinite(y)], level))
    if kind == "EVaR":
        def g(e):
            s = e - cap
            return float(level * np.mean(partial_moment(law, s, "above"))
                         - (1 - level) * np.mean(partial_moment(law, s, "below")))

        lo, hi = _expectile_bracket(g, float(np.min(cap)), float(np.max(cap)), law)
        return -optimize.brentq(g, lo, hi, xtol=1e-12)
    q = _mixture_quantile(law, cap, level)
    if kind == "VaR":
        return float(-q)
    fin = np.isfinite(cap)
    below = np.zeros_like(cap)
    below[fin] = partial_moment(law, q - cap[fin], "below")
    return float(-q + np.mean(below) / level)


def _expectile_bracket(g, cmin, cmax, law):
    from .distributions import dist_mean

    m = dist_mean(law, conditional=True)
    width = 1.0 + abs(cmax - cmin) + abs(m)
    lo, hi = m + cmin - width, m + cmax + width
    while g(lo) < 0:
        lo -= width
        width *= 2
    while g(hi) > 0:
        hi += width
        width *= 2
    return lo, hi


def secured_breach_probability(rep: Replicates, a: float) -> float:
    """P(X + rho_a < 0) under the replicate law (exact convolution)."""
    cap = rep.capital(a)
    return float(np.mean(_x_cdf(rep.law, -cap)))


def risk_bias_at(theta, risk: RiskSpec, n: int, a: float, B: int, rng: RandomStream,
                 estimator: str = "plugin", convolution: str = "exact") -> float:
    """Signed risk bias of the a-rescaled estimator at theta (0 means unbiased,
    positive means the secured position still carries risk)."""
    rep = draw_replicates(theta, risk, n, B, rng, estimator=estimator)
    rep.convolution = convolution
    return secured_risk(rep, a)


# -- the adjustment ---------------------------------------------------------------

def bootstrap_adjustment(theta_hat, risk: RiskSpec, n: int, config: BiasSearchConfig,
                         rng: RandomStream, replicates: Replicates | None = None) -> LocalAdjustment:
    """Scale multiplier a solving bias(a) = target at theta_hat.

    The target is 0, or ``bias_allowance`` times the bootstrap standard error
    of the plug-in estimate.  One replicate set is reused for every probe of
    ``a`` so the objective is a deterministic non-increasing function.
    """
    rep = replicates or draw_replicates(theta_hat, risk, n, config.bootstrap_size, rng,
                                        max_drop_fraction=config.max_drop_fraction)
    rep.convolution = config.convolution
    se = rep.plugin_se
    target = config.bias_allowance * se

    def f(a):
        return secured_risk(rep, a) - target

    lo, hi = config.bracket
    flo, fhi = f(lo), f(hi)
    diag = {"f_lo": flo, "f_hi": fhi, "bracket": (lo, hi), "dropped": rep.dropped}
    if not (flo >= 0 >= fhi):
        raise BracketError(f"no sign change of the bias on [{lo}, {hi}] (f={flo:.4g}, {fhi:.4g})", diag)
    if flo == 0:
        a = lo
    elif fhi == 0:
        a = hi
    elif config.convolution == "exact":
        a = optimize.brentq(f, lo, hi, xtol=config.root_tol, maxiter=max(config.max_iter, 100))
    else:
        for _ in range(config.max_iter):
            mid = 0.5 * (lo + hi)
            if f(mid) > 0:
                lo = mid
            else:
                hi = mid
            if hi - lo < config.root_tol:
                break
        a = 0.5 * (lo + hi)
    residual = secured_risk(rep, a)
    return LocalAdjustment(float(a), theta_hat, float(residual), se, target, diag)


def adjusted_estimate(plugin_capital, u: float, a: float):
    """-u + a (plugin + u): the plug-in capital with the scale parameter times a.

    ``u`` is the GPD threshold; for the normal law pass ``u = mu_hat``.
    """
    if not a > 0:
        raise DomainError("a must be > 0")
    return -u + a * (np.asarray(plugin_capital) + u)


def rescaled_gaussian(fit: GaussianFit, a: float) -> GaussianFit:
    return replace(fit, sigma_hat=a * fit.sigma_hat)


def gaussian_es_constant(n: int, alpha: float, B: int = 400_000, seed: int = 250,
                         tol: float = 1e-7) -> float:
    """Multiplier c_n making -mu_hat + c_n sigma_hat phi(z_alpha)/alpha ES-unbiased.

    By location-scale equivariance the root does not depend on (mu, sigma),
    so it is computed once at the standard normal.
    """
    config = BiasSearchConfig(bootstrap_size=B, root_tol=tol, bracket=(0.5, 3.0))
    adj = bootstrap_adjustment(Normal(0.0, 1.0), RiskSpec("ES", alpha), n, config,
                               RandomStream(seed, stream_id=n))
    return adj.a


# -- grids ------------------------------------------------------------------------

@dataclass(frozen=True)
class GridPoint:
    p1: float
    p2: float
    a: float
    residual_bias: float
    error: str = ""


def _grid_task(args):
    family, p1, p2, u, risk, n, config, rng = args
    theta = Normal(p1, p2) if family == "Normal" else GpdLeftTail(u, p1, p2)
    try:
        adj = bootstrap_adjustment(theta, risk, n, config, rng)
        return GridPoint(p1, p2, adj.a, adj.residual_bias)
    except Exception as exc:  # per-point failures are recorded, not fatal
        return GridPoint(p1, p2, float("nan"), float("nan"), f"{type(exc).__name__}: {exc}")


def adjustment_grid(family: str, param_grid: Sequence[tuple], risk: RiskSpec, n: int,
                    config: BiasSearchConfig, rng: RandomStream, u: float = 0.0,
                    workers: int | None = None, common_random_numbers: bool = True):
    """Adjustment a for every (p1, p2) point: (mu, sigma) for Normal, (xi, beta) for GPD.

    With ``common_random_numbers`` every point reuses one sub-stream, so a is a
    smooth function across the grid; otherwise point i uses sub-stream i.
    """
    if family not in ("Normal", "GPD"):
        raise ConfigurationError("family must be 'Normal' or 'GPD'")
    if not param_grid:
        raise ConfigurationError("empty parameter grid")
    tasks = [(family, float(p1), float(p2), u, risk, n, config,
              rng.substream(0 if common_random_numbers else i))
             for i, (p1, p2) in enumerate(param_grid)]
    return ordered_map(_grid_task, tasks, workers)


def write_heatmap_csv(path, points, n, alpha, B, seed, anchor: str):
    import csv

    with open(path, "w", newline="") as fh:
        fh.write(f"# {anchor}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p1", "p2", "a", "residual_bias", "n", "alpha", "B", "seed", "error"])
        for pt in points:
            w.writerow([_fmt(pt.p1), _fmt(pt.p2), _fmt(pt.a), _fmt(pt.residual_bias), n, alpha, B, seed, pt.error])


def _fmt(v):
    return "nan" if v != v else f"{v:.10g}"


class AdjustmentTable:
    """Adjustment a as a function of the GPD shape alone.

    a is invariant to beta (positive homogeneity) and to u (it only shifts),
    so one bootstrap per shape grid point serves every window; lookups
    interpolate linearly and clamp to the grid ends.
    """

    def __init__(self, xi, a, errors=None):
        self.xi = np.asarray(xi, dtype=float)
        self.a = np.asarray(a, dtype=float)
        self.errors = list(errors or [""] * len(self.xi))
        ok = np.isfinite(self.a)
        if not ok.any():
            raise BracketError("no grid point produced an adjustment")
        self._xi_ok, self._a_ok = self.xi[ok], self.a[ok]

    @classmethod
    def build(cls, risk: RiskSpec, n: int, config: BiasSearchConfig, rng: RandomStream,
              xi_min: float = -0.5, xi_max: float = 1.5, step: float = 0.01, workers: int | None = None):
        count = int(round((xi_max - xi_min) / step)) + 1
        grid = np.round(xi_min + step * np.arange(count), 10)
        if risk.kind == "ES":
            grid = grid[grid < 1.0]
        grid = np.where(grid == 0.0, 1e-9, grid)  # the shape must be non-zero
        pts = adjustment_grid("GPD", [(x, 1.0) for x in grid], risk, n, config, rng, workers=workers)
        return cls(grid, [p.a for p in pts], [p.error for p in pts])

    def __call__(self, xi_hat):
        return np.interp(np.asarray(xi_hat, dtype=float), self._xi_ok, self._a_ok)

    @property
    def failures(self) -> int:
        return int(np.sum(~np.isfinite(self.a)))
