"""Rolling-window backtests and the statistics that score them.

A backtest over ``n + m`` observations fits each estimator on the trailing
``n`` points and secures day ``t`` with ``y_t = x_t + rho_t``.  Breaches are
strict (``y_t < 0``).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special, stats

from ._parallel import ordered_map
from .bias_reduction import AdjustmentTable, BiasSearchConfig, bootstrap_adjustment
from .distributions import Garch11, GpdLeftTail, Normal, RandomStream, StudentT, binomial_cdf, garch_sigma_recursion
from .errors import ConfigurationError, DomainError, FitFailureError
from .estimators import GaussianFit, fit_garch_qmle, pwm_batch
from .risk_measures import (
    PINNED_ES_CONSTANTS,
    RiskSpec,
    gaussian_capital,
    gpd_capital,
    risk_empirical,
    risk_true,
    standard_expectile,
)

log = logging.getLogger(__name__)

__all__ = [
    "EstimatorSpec",
    "BacktestConfig",
    "SecuredSeries",
    "BacktestReport",
    "DMResult",
    "run_backtest",
    "secure",
    "stat_T",
    "stat_S",
    "stat_G",
    "stat_H",
    "stat_NGZ",
    "ngz_threshold",
    "stat_DM",
    "stat_MR_SD",
    "dual_level",
    "traffic_zone",
    "make_report",
    "running_statistic",
]

ESTIMATOR_KINDS = ("true", "plugin", "empirical", "unbiased", "b_true", "b")


@dataclass(frozen=True)
class EstimatorSpec:
    """Which estimator to run.

    ``bias`` configures the bootstrap estimators; ``b_true`` uses its
    ``bias_allowance`` at the true parameter, ``b`` ignores the allowance and
    applies the ``outlier_quantile`` guard.  ``direct`` bypasses the shape
    memo table for ``b`` (one bootstrap per window).
    """

    kind: str
    quantile_method: str = "interpolated"
    bias: BiasSearchConfig | None = None
    direct: bool = False
    refit_stride: int = 1
    table: AdjustmentTable | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ConfigurationError(f"unknown estimator {self.kind!r}")
        if self.refit_stride < 1:
            raise ConfigurationError("refit_stride must be >= 1")

    @property
    def label(self) -> str:
        return {"plugin": "plug-in", "b_true": "b-true", "empirical": "emp"}.get(self.kind, self.kind)


@dataclass(frozen=True)
class BacktestConfig:
    window: int
    horizon: int
    risk: RiskSpec
    estimator: EstimatorSpec
    law: object
    ngz_window: int = 50
    ngz_confidence: float = 0.95
    workers: int | None = None

    def __post_init__(self):
        if self.window < 2 or self.horizon < 1:
            raise ConfigurationError("need window >= 2 and horizon >= 1")
        if self.ngz_window > self.horizon:
            raise ConfigurationError("ngz_window must not exceed the horizon")


@dataclass
class SecuredSeries:
    x: np.ndarray
    rho: np.ndarray
    y: np.ndarray
    fit_failures: int = 0
    label: str = ""
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.y)

    @property
    def breaches(self) -> np.ndarray:
        return self.y < 0


def secure(x, rho, label: str = "", fit_failures: int = 0, **extras) -> SecuredSeries:
    x = np.asarray(x, dtype=float)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), x.shape).copy()
    return SecuredSeries(x, rho, x + rho, fit_failures, label, extras)


def _y(series) -> np.ndarray:
    return series.y if isinstance(series, SecuredSeries) else np.asarray(series, dtype=float)


# -- rolling estimators --------------------------------------------------------------

def _windows(data, n):
    return sliding_window_view(data[:-1], n)


def run_backtest(data, config: BacktestConfig, rng: RandomStream | None = None,
                 sigma_path=None) -> SecuredSeries:
    """Rolling backtest over ``data`` (length n + m).

    ``sigma_path`` (GARCH only) holds the latent conditional sigma of every
    observation and feeds the true-risk estimator.  GPD laws run on the
    conditional left-tail stream at the conditional level.
    """
    data = np.asarray(data, dtype=float)
    n, m = config.window, config.horizon
    if data.size != n + m:
        raise ConfigurationError(f"data length {data.size} != window + horizon = {n + m}")
    law, est = config.law, config.estimator
    x = data[n:]
    if isinstance(law, Garch11):
        rho, failures, extras = _garch_rho(data, config, sigma_path)
    elif isinstance(law, GpdLeftTail):
        rho, failures, extras = _gpd_rho(data, config, rng)
    elif isinstance(law, (Normal, StudentT)):
        rho, failures, extras = _location_scale_rho(data, config, rng)
    else:
        raise ConfigurationError(f"unsupported law {law!r}")
    return secure(x, rho, est.label, failures, **extras)


def _empirical_rho(data, config, risk=None):
    return risk_empirical(_windows(data, config.window), risk or config.risk, method=config.estimator.quantile_method)


def _outlier_guard(plug, a, quantile):
    if quantile is None:
        return np.broadcast_to(a, plug.shape).astype(float), 0
    cut = np.quantile(plug, quantile)
    guarded = plug > cut
    return np.where(guarded, 1.0, a), int(guarded.sum())


def _location_scale_rho(data, config, rng):
    risk, est, law, n = config.risk, config.estimator, config.law, config.window
    kind = est.kind
    if kind == "true":
        return np.full(config.horizon, risk_true(law, risk)), 0, {}
    if kind == "empirical":
        return _empirical_rho(data, config), 0, {}
    w = _windows(data, n)
    mu = w.mean(axis=1)
    sd = w.std(axis=1, ddof=1)
    if isinstance(law, StudentT):
        if kind != "plugin":
            raise ConfigurationError("Student-t backtests support true, plugin and empirical")
        scale = sd * math.sqrt((law.nu - 2) / law.nu)
        if risk.kind == "VaR":
            q = stats.t.ppf(risk.level, law.nu)
            return -(mu + scale * q), 0, {}
        if risk.kind == "EVaR":
            return -(mu + scale * standard_expectile("t", risk.level, law.nu)), 0, {}
        std_es = risk_true(StudentT(law.nu, 0.0, 1.0), risk)
        return -mu + scale * std_es, 0, {}
    if kind == "plugin":
        return gaussian_capital(mu, sd, risk.kind, risk.level), 0, {}
    if kind == "unbiased":
        if risk.kind == "VaR":
            factor = math.sqrt((n + 1) / n) * stats.t.ppf(risk.level, n - 1) / special.ndtri(risk.level)
            return gaussian_capital(mu, factor * sd, "VaR", risk.level), 0, {}
        if risk.kind == "ES":
            c = PINNED_ES_CONSTANTS.get((n, risk.level))
            if c is None:
                from .bias_reduction import gaussian_es_constant

                c = gaussian_es_constant(n, risk.level)
            return gaussian_capital(mu, c * sd, "ES", risk.level), 0, {"c_n": c}
        raise ConfigurationError("no closed-form unbiased EVaR estimator")
    # bootstrap estimators: a does not depend on (mu, sigma) for the normal law
    cfg = est.bias or BiasSearchConfig()
    rng = rng or RandomStream(0)
    if kind == "b_true":
        adj = bootstrap_adjustment(law, risk, n, cfg, rng)
        a = adj.a
        guard = None
    else:
        adj = bootstrap_adjustment(Normal(0.0, 1.0), risk, n, BiasSearchConfig(**{**cfg.__dict__, "bias_allowance": 0.0}), rng)
        a = adj.a
        guard = cfg.outlier_quantile
    plug = gaussian_capital(mu, sd, risk.kind, risk.level)
    a_t, guarded = _outlier_guard(plug, a, guard)
    return gaussian_capital(mu, a_t * sd, risk.kind, risk.level), 0, {"a": a, "guarded": guarded}


def _gpd_rho(data, config, rng):
    risk, est, law, n = config.risk, config.estimator, config.law, config.window
    level = risk.tail_level(law)
    lrisk = RiskSpec(risk.kind, level, conditional=True)
    kind = est.kind
    if kind == "true":
        return np.full(config.horizon, risk_true(law, lrisk)), 0, {}
    if kind == "empirical":
        return _empirical_rho(data, config, lrisk), 0, {}
    if kind == "unbiased":
        raise ConfigurationError("no closed-form unbiased GPD estimator; use b or b_true")
    if risk.kind not in ("VaR", "ES"):
        raise ConfigurationError("GPD backtests cover VaR and ES")
    w = _windows(data, n)
    xi, beta = pwm_batch(law.u - w)
    failures = int(np.sum(~np.isfinite(xi)))
    if failures:
        xi, beta = _carry_forward(xi), _carry_forward(beta)
    plug = gpd_capital(law.u, xi, beta, risk.kind, level)
    extras = {"xi_hat": xi, "beta_hat": beta}
    if kind == "plugin":
        return plug, failures, extras
    cfg = est.bias or BiasSearchConfig()
    rng = rng or RandomStream(0)
    if kind == "b_true":
        adj = bootstrap_adjustment(law, lrisk, n, cfg, rng)
        extras.update(a=adj.a, bootstrap_se=adj.bootstrap_se)
        return -law.u + adj.a * (plug + law.u), failures, extras
    plain = BiasSearchConfig(**{**cfg.__dict__, "bias_allowance": 0.0})
    if est.direct:
        a = np.array([_direct_adjustment(law.u, xi[t], beta[t], lrisk, n, plain, rng.substream(t))
                      for t in range(len(xi))])
    else:
        table = est.table or AdjustmentTable.build(lrisk, n, plain, rng, workers=config.workers)
        a = table(xi)
        extras["table_failures"] = table.failures
    a_t, guarded = _outlier_guard(plug, a, cfg.outlier_quantile)
    extras.update(a=a_t, guarded=guarded)
    return -law.u + a_t * (plug + law.u), failures, extras


def _direct_adjustment(u, xi, beta, risk, n, cfg, rng):
    try:
        return bootstrap_adjustment(GpdLeftTail(u, xi if xi != 0 else 1e-9, beta), risk, n, cfg, rng).a
    except Exception as exc:
        log.debug("direct adjustment failed at xi=%s: %s", xi, exc)
        return 1.0


def _carry_forward(v):
    v = np.array(v, dtype=float)
    for i in range(len(v)):
        if not np.isfinite(v[i]):
            v[i] = v[i - 1] if i > 0 else np.nanmean(v)
    return v


def _garch_fit_task(args):
    window = args
    try:
        f = fit_garch_qmle(window)
        return (f.mu_hat, f.omega_hat, f.alpha_hat, f.beta_hat)
    except (FitFailureError, DomainError, ValueError) as exc:
        log.debug("GARCH fit failed: %s", exc)
        return None


def _garch_rho(data, config, sigma_path):
    risk, est, law, n, m = config.risk, config.estimator, config.law, config.window, config.horizon
    kind = est.kind
    if kind == "true":
        if sigma_path is None:
            raise ConfigurationError("true GARCH risk needs the sigma path")
        sig = np.asarray(sigma_path, dtype=float)[n:]
        return np.asarray(risk_true(law, risk, sigma_t=sig), dtype=float), 0, {}
    if kind == "empirical":
        return _empirical_rho(data, config), 0, {}
    if kind != "plugin":
        raise ConfigurationError("GARCH backtests support true, plugin and empirical")
    w = _windows(data, n)
    refit_days = list(range(0, m, est.refit_stride))
    fits = ordered_map(_garch_fit_task, [w[t] for t in refit_days], config.workers, chunksize=16)
    failures = 0
    params = []
    prev = None
    for f in fits:
        if f is None:
            failures += 1
            if prev is None:
                g = fit_garch_fallback(w[0])
                prev = g
            f = prev
        prev = f
        params.append(f)
    rho = np.empty(m)
    for j, t0 in enumerate(refit_days):
        mu, omega, a, b = params[j]
        for t in range(t0, min(t0 + est.refit_stride, m)):
            win = w[t]
            s0 = float(np.std(win - win.mean()))
            s_next = math.sqrt(garch_sigma_recursion(win, omega, a, b, s0)[-1])
            rho[t] = float(gaussian_capital(mu, s_next, risk.kind, risk.level)) if risk.kind != "EVaR" else -(
                mu + s_next * standard_expectile("normal", risk.level))
    return rho, failures, {}


def fit_garch_fallback(window):
    """Parameters used when the very first window cannot be fitted: the
    starting point of the optimizer."""
    v = float(np.var(window))
    return (float(np.mean(window)), 0.1 * v, 0.1, 0.8)


# -- statistics ---------------------------------------------------------------------

def stat_T(series) -> float:
    """Exception rate (1/m) #{t: y_t < 0}."""
    y = _y(series)
    return float(np.count_nonzero(y < 0) / y.size)


def stat_S(series, alpha: float) -> float:
    """Mean quantile score -(1/m) sum (1{y_t < 0} - alpha) y_t; lower is better."""
    y = _y(series)
    return float(-np.mean(((y < 0) - alpha) * y))


def _scores(y, alpha):
    return -(((y < 0) - alpha) * y)


def stat_G(series) -> float:
    """Fraction of ascending partial sums of sorted y that are negative."""
    y = np.sort(_y(series))
    return float(np.count_nonzero(np.cumsum(y) < 0) / y.size)


def stat_H(series) -> float:
    """Distorted gain-loss ratio L/(P + L); zeros count on the gain side."""
    y = _y(series)
    gains = float(np.sum(y[y >= 0]))
    losses = float(-np.sum(y[y < 0]))
    total = gains + losses
    return losses / total if total > 0 else 0.0


def ngz_threshold(N: int, alpha: float, confidence: float = 0.95) -> int:
    """Smallest breach count k with F_{Bin(N, alpha)}(k) >= confidence."""
    for k in range(N + 1):
        if binomial_cdf(N, alpha, k) >= confidence:
            return k
    return N + 1


def stat_NGZ(series, N: int = 50, alpha: float = 0.05, confidence: float = 0.95) -> float:
    """Share of the m - N sliding N-day windows whose breach count reaches z_alpha."""
    b = (_y(series) < 0).astype(np.int64)
    m = b.size
    if N > m:
        raise DomainError("N must not exceed m")
    if m == N:
        return 0.0
    z = ngz_threshold(N, alpha, confidence)
    csum = np.concatenate(([0], np.cumsum(b)))
    counts = csum[N:m] - csum[0:m - N]  # windows starting at s = 1..m-N
    return float(np.count_nonzero(counts >= z) / (m - N))


@dataclass(frozen=True)
class DMResult:
    statistic: float
    p_value: float
    degenerate: bool = False


def stat_DM(series_a, series_b, alpha: float) -> DMResult:
    """Diebold-Mariano statistic sqrt(m) mean(d)/sd(d), d_t = s_a,t - s_b,t.

    s is the quantile score of each secured day.  A positive statistic means
    ``series_b`` has the lower (better) mean score.
    """
    if isinstance(series_a, SecuredSeries) and isinstance(series_b, SecuredSeries):
        if not np.array_equal(series_a.x, series_b.x):
            raise ConfigurationError("DM comparison needs the same P&L stream")
    ya, yb = _y(series_a), _y(series_b)
    if ya.shape != yb.shape:
        raise ConfigurationError("series lengths differ")
    d = _scores(ya, alpha) - _scores(yb, alpha)
    m = d.size
    mean = float(np.mean(d))
    sd = float(np.std(d, ddof=1)) if m > 1 else 0.0
    if sd <= 1e-12 * abs(mean):  # constant loss differential up to rounding
        if mean == 0.0:
            return DMResult(0.0, 1.0)
        return DMResult(math.copysign(math.inf, mean), 0.0, degenerate=True)
    stat = math.sqrt(m) * mean / sd
    return DMResult(stat, float(2 * special.ndtr(-abs(stat))))


def stat_MR_SD(series) -> tuple[float, float]:
    rho = series.rho if isinstance(series, SecuredSeries) else np.asarray(series, dtype=float)
    mr = float(np.mean(rho))
    if rho.size < 2 or np.all(rho == rho[0]):
        return (float(rho[0]) if rho.size else mr), 0.0
    sd = float(np.std(rho, ddof=1))
    return mr, sd


def dual_level(series, family: str) -> float:
    """inf{alpha in (0, 1]: R_alpha^emp(y) <= 0} from the order statistics.

    Candidate levels are j/m: the empirical risk at alpha uses the first
    floor(m alpha) + 1 order statistics (VaR: the last of them, ES: their
    average), so it only changes at those grid points.
    """
    y = np.sort(_y(series))
    m = y.size
    if family == "VaR":
        risk = -y
    elif family == "ES":
        risk = -np.cumsum(y) / np.arange(1, m + 1)
    else:
        raise ConfigurationError("family must be 'VaR' or 'ES'")
    ok = np.flatnonzero(risk <= 0)
    if ok.size == 0:
        return 1.0
    return float(ok[0] / m)


def traffic_zone(series) -> str:
    y = _y(series)
    if y.size != 250:
        warnings.warn(f"traffic-light zones are calibrated for m = 250, got m = {y.size}", stacklevel=2)
    t = stat_T(y)
    if t < 0.02:
        return "green"
    if t < 0.04:
        return "yellow"
    return "red"


@dataclass(frozen=True)
class BacktestReport:
    label: str
    T: float
    S: float
    G: float
    H: float
    NGZ: float
    DM: DMResult | None
    MR: float
    SD: float
    zone: str | None
    fit_failures: int = 0


def make_report(series: SecuredSeries, alpha: float, reference: SecuredSeries | None = None,
                N: int = 50, confidence: float = 0.95) -> BacktestReport:
    """All statistics of one secured series; DM is taken against ``reference``
    (reference first, so a positive value favours ``series``)."""
    dm = None
    if reference is not None and reference is not series:
        dm = stat_DM(reference, series, alpha)
    mr, sd = stat_MR_SD(series)
    zone = traffic_zone(series) if len(series) == 250 else None
    ngz = stat_NGZ(series, N, alpha, confidence) if len(series) > N else float("nan")
    return BacktestReport(series.label, stat_T(series), stat_S(series, alpha), stat_G(series),
                          stat_H(series), ngz, dm, mr, sd, zone, series.fit_failures)


def running_statistic(series, statistic: str, checkpoints, alpha: float | None = None) -> np.ndarray:
    """Statistic evaluated on the first m_k days for every checkpoint m_k."""
    y = _y(series)
    cps = np.asarray(checkpoints, dtype=int)
    if statistic == "T":
        c = np.cumsum(y < 0)
        return c[cps - 1] / cps
    if statistic == "H":
        gains = np.cumsum(np.where(y >= 0, y, 0.0))
        losses = np.cumsum(np.where(y < 0, -y, 0.0))
        tot = gains[cps - 1] + losses[cps - 1]
        return np.where(tot > 0, losses[cps - 1] / np.where(tot > 0, tot, 1.0), 0.0)
    if statistic == "G":
        return np.array([stat_G(y[:k]) for k in cps])
    if statistic == "S":
        s = np.cumsum(_scores(y, alpha))
        return s[cps - 1] / cps
    raise ConfigurationError(f"unknown running statistic {statistic!r}")
