"""Laws used by the simulation studies: analytic functions and seeded sampling.

Every law is a frozen dataclass; the module-level functions dispatch on the
type.  The generalized Pareto law models the *left* tail of a P&L: below the
threshold ``u`` the variable is ``X = u - Z`` with ``Z ~ GPD(xi, beta)`` and
``P(X <= u) = p``.  The conditional law of ``X`` given ``X <= u`` is selected
with ``conditional=True``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import special, stats
from scipy.signal import lfilter

from .errors import DomainError, InfiniteMomentError, UnsupportedLawError

__all__ = [
    "Normal",
    "StudentT",
    "GpdLeftTail",
    "Garch11",
    "RandomStream",
    "Sample",
    "dist_cdf",
    "dist_quantile",
    "dist_mean",
    "sample_iid",
    "garch_simulate",
    "garch_sigma_recursion",
    "binomial_cdf",
    "partial_moment",
    "gpd_sf",
    "gpd_ppf",
    "gpd_excess_partial",
]


@dataclass(frozen=True)
class Normal:
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True)
class StudentT:
    nu: float
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.nu > 0:
            raise DomainError(f"nu must be > 0, got {self.nu}")
        if not self.scale > 0:
            raise DomainError(f"scale must be > 0, got {self.scale}")


@dataclass(frozen=True)
class GpdLeftTail:
    """Left-tail GPD law with P&L threshold ``u`` and tail mass ``p``.

    ``body`` optionally describes the law above ``u`` (truncated to
    ``(u, inf)``); without it only the conditional tail law is complete.
    """

    u: float
    xi: float
    beta: float
    p: float = 0.2
    body: Optional[Union[Normal, StudentT]] = None

    def __post_init__(self):
        if self.xi == 0:
            raise DomainError("xi must be non-zero")
        if not self.beta > 0:
            raise DomainError(f"beta must be > 0, got {self.beta}")
        if not 0 < self.p < 1:
            raise DomainError(f"p must lie in (0, 1), got {self.p}")


@dataclass(frozen=True)
class Garch11:
    """GARCH(1,1): X_t = mu + sigma_t eps_t, sigma_t^2 = omega + alpha X_{t-1}^2 + beta sigma_{t-1}^2."""

    mu: float = 0.0
    omega: float = 1e-4
    alpha: float = 0.1
    beta: float = 0.8
    sigma_init: float = 0.01

    def __post_init__(self):
        if not self.omega > 0:
            raise DomainError("omega must be > 0")
        if self.alpha < 0 or self.beta < 0:
            raise DomainError("alpha and beta must be >= 0")
        if not self.alpha + self.beta < 1:
            raise DomainError("alpha + beta must be < 1 (covariance stationarity)")
        if not self.sigma_init > 0:
            raise DomainError("sigma_init must be > 0")

    @property
    def stationary_variance(self) -> float:
        return self.omega / (1.0 - self.alpha - self.beta)


IidLaw = Union[Normal, StudentT, GpdLeftTail]
DistributionSpec = Union[Normal, StudentT, GpdLeftTail, Garch11]


@dataclass(frozen=True)
class RandomStream:
    """Reproducible, splittable random stream.

    ``(seed, stream_id, path)`` fully determines the draws, so sub-streams
    handed to workers never depend on scheduling.
    """

    seed: int
    stream_id: int = 0
    path: tuple = ()

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id, *self.path))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, index: int) -> "RandomStream":
        return RandomStream(self.seed, self.stream_id, self.path + (int(index),))


@dataclass(frozen=True)
class Sample:
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def _check_iid(spec):
    if isinstance(spec, Garch11):
        raise UnsupportedLawError("GARCH(1,1) is path dependent; no unconditional law implemented")
    if not isinstance(spec, (Normal, StudentT, GpdLeftTail)):
        raise UnsupportedLawError(f"unknown law {spec!r}")


# -- generalized Pareto excesses ------------------------------------------------

def gpd_sf(z, xi, beta):
    """Survival function of GPD(xi, beta) on z (vectorized, z < 0 gives 1)."""
    z = np.asarray(z, dtype=float)
    zc = np.maximum(z, 0.0)
    arg = 1.0 + xi * zc / beta
    with np.errstate(divide="ignore", invalid="ignore"):
        if xi == 0:
            out = np.exp(-zc / beta)
        else:
            out = np.where(arg > 0, np.exp(-np.log(np.where(arg > 0, arg, 1.0)) / xi), 0.0)
    return out


def gpd_ppf(q, xi, beta):
    """Quantile of GPD(xi, beta); ``q`` in [0, 1)."""
    q = np.asarray(q, dtype=float)
    if xi == 0:
        return -beta * np.log1p(-q)
    return beta * np.expm1(-xi * np.log1p(-q)) / xi


def gpd_excess_partial(c, xi, beta):
    """E[(Z - c)_+] for Z ~ GPD(xi, beta), xi < 1."""
    if xi >= 1:
        raise InfiniteMomentError(f"GPD with xi={xi} has infinite mean")
    c = np.asarray(c, dtype=float)
    mean = beta / (1.0 - xi)
    cp = np.maximum(c, 0.0)
    upper = (beta + xi * cp) / (1.0 - xi) * gpd_sf(cp, xi, beta)
    return np.where(c <= 0, mean - c, upper)


# -- cdf / quantile ---------------------------------------------------------------

def _body_cdf(body, x):
    if isinstance(body, Normal):
        return special.ndtr((x - body.mu) / body.sigma)
    return stats.t.cdf(x, body.nu, loc=body.loc, scale=body.scale)


def _body_ppf(body, q):
    if isinstance(body, Normal):
        return body.mu + body.sigma * special.ndtri(q)
    return stats.t.ppf(q, body.nu, loc=body.loc, scale=body.scale)


def dist_cdf(spec: IidLaw, x, conditional: bool = False):
    """P(X <= x).  For the GPD, ``conditional`` selects the law given X <= u."""
    _check_iid(spec)
    x = np.asarray(x, dtype=float)
    if isinstance(spec, Normal):
        return special.ndtr((x - spec.mu) / spec.sigma)
    if isinstance(spec, StudentT):
        return stats.t.cdf(x, spec.nu, loc=spec.loc, scale=spec.scale)
    tail = gpd_sf(spec.u - x, spec.xi, spec.beta)
    if conditional:
        return np.where(x <= spec.u, tail, 1.0)
    if np.any(x > spec.u):
        if spec.body is None:
            raise DomainError("law above the threshold u is unspecified (no body given)")
        fb_u = _body_cdf(spec.body, spec.u)
        above = spec.p + (1 - spec.p) * (_body_cdf(spec.body, x) - fb_u) / (1 - fb_u)
        return np.where(x <= spec.u, spec.p * tail, above)
    return spec.p * tail


def dist_quantile(spec: IidLaw, q, conditional: bool = False):
    _check_iid(spec)
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise DomainError("quantile level must lie in (0, 1)")
    if isinstance(spec, Normal):
        return spec.mu + spec.sigma * special.ndtri(q)
    if isinstance(spec, StudentT):
        return stats.t.ppf(q, spec.nu, loc=spec.loc, scale=spec.scale)
    if conditional:
        return spec.u - gpd_ppf(1.0 - q, spec.xi, spec.beta)
    if np.any(q > spec.p):
        if spec.body is None:
            raise DomainError(f"level above tail mass p={spec.p} needs a body law")
        fb_u = _body_cdf(spec.body, spec.u)
        qb = fb_u + (q - spec.p) / (1 - spec.p) * (1 - fb_u)
        body_q = _body_ppf(spec.body, np.clip(qb, fb_u, 1.0))
        tail_q = spec.u - gpd_ppf(1.0 - np.minimum(q, spec.p) / spec.p, spec.xi, spec.beta)
        return np.where(q <= spec.p, tail_q, body_q)
    return spec.u - gpd_ppf(1.0 - q / spec.p, spec.xi, spec.beta)


def dist_mean(spec: IidLaw, conditional: bool = True) -> float:
    _check_iid(spec)
    if isinstance(spec, Normal):
        return spec.mu
    if isinstance(spec, StudentT):
        if spec.nu <= 1:
            raise InfiniteMomentError(f"Student-t with nu={spec.nu} has no finite mean")
        return spec.loc
    if not conditional:
        raise UnsupportedLawError("only the conditional tail mean of the GPD law is available")
    if spec.xi >= 1:
        raise InfiniteMomentError(f"GPD with xi={spec.xi} has infinite mean")
    return spec.u - spec.beta / (1.0 - spec.xi)


# -- sampling -----------------------------------------------------------------

def sample_iid(spec: IidLaw, count: int, rng: RandomStream, conditional: bool = True) -> Sample:
    """Draw ``count`` i.i.d. values.  GPD draws are conditional (X = u - Z) unless
    ``conditional=False``, which needs ``spec.body`` for the part above u."""
    _check_iid(spec)
    if count < 1:
        raise DomainError("count must be >= 1")
    gen = rng.generator()
    meta = {"spec": spec, "seed": rng.seed, "stream": (rng.stream_id, *rng.path)}
    if isinstance(spec, Normal):
        values = spec.mu + spec.sigma * gen.standard_normal(count)
    elif isinstance(spec, StudentT):
        values = spec.loc + spec.scale * gen.standard_t(spec.nu, count)
    elif conditional:
        values = spec.u - gpd_ppf(gen.random(count), spec.xi, spec.beta)
    else:
        if spec.body is None:
            raise DomainError("unconditional GPD sampling needs a body law above u")
        in_tail = gen.random(count) < spec.p
        z = gpd_ppf(gen.random(count), spec.xi, spec.beta)
        fb_u = _body_cdf(spec.body, spec.u)
        body = _body_ppf(spec.body, fb_u + gen.random(count) * (1 - fb_u))
        values = np.where(in_tail, spec.u - z, body)
    meta["conditional"] = conditional
    return Sample(values, meta)


def garch_simulate(spec: Garch11, length: int, rng: RandomStream):
    """Simulate ``length`` steps; returns (path, sigma_path) with sigma_path[0] = sigma_init."""
    if length < 1:
        raise DomainError("length must be >= 1")
    eps = rng.generator().standard_normal(length)
    x = np.empty(length)
    sig = np.empty(length)
    mu, omega, a, b = spec.mu, spec.omega, spec.alpha, spec.beta
    s2 = spec.sigma_init ** 2
    sqrt = math.sqrt
    for t in range(length):
        s = sqrt(s2)
        sig[t] = s
        xt = mu + s * eps[t]
        x[t] = xt
        s2 = omega + a * xt * xt + b * s2
    meta = {"spec": spec, "seed": rng.seed, "stream": (rng.stream_id, *rng.path)}
    return Sample(x, meta), Sample(sig, meta)


def garch_sigma_recursion(x, omega, alpha, beta, sigma_init):
    """Conditional variances sigma_t^2 for t = 0..len(x) driven by observed ``x``.

    Entry 0 is ``sigma_init**2``; the last entry is the one-step-ahead variance.
    """
    x = np.asarray(x, dtype=float)
    s0 = sigma_init ** 2
    drive = omega + alpha * x * x
    rest, _ = lfilter([1.0], [1.0, -beta], drive, zi=[beta * s0])
    return np.concatenate(([s0], rest))


# -- binomial -----------------------------------------------------------------

def binomial_cdf(trials: int, success_prob: float, k: int) -> float:
    """P(Bin(trials, success_prob) <= k)."""
    if not 0 <= k <= trials:
        raise DomainError(f"k={k} outside [0, {trials}]")
    if not 0 <= success_prob <= 1:
        raise DomainError("success_prob must be a probability")
    if k == trials:
        return 1.0
    return float(special.bdtr(k, trials, success_prob))


# -- partial moments ---------------------------------------------------------------

def partial_moment(spec: IidLaw, threshold, side: str = "above"):
    """E[(X - t)_+] (``side='above'``) or E[(t - X)_+] (``side='below'``).

    GPD laws use the conditional tail law.
    """
    _check_iid(spec)
    if side not in ("above", "below"):
        raise DomainError("side must be 'above' or 'below'")
    t = np.asarray(threshold, dtype=float)
    mean = dist_mean(spec, conditional=True)
    if isinstance(spec, Normal):
        z = (t - spec.mu) / spec.sigma
        above = spec.sigma * (np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi) - z * special.ndtr(-z))
    elif isinstance(spec, StudentT):
        s = (t - spec.loc) / spec.scale
        nu = spec.nu
        above = spec.scale * ((nu + s * s) / (nu - 1) * stats.t.pdf(s, nu) - s * stats.t.sf(s, nu))
    else:
        c = spec.u - t
        ez = spec.beta / (1 - spec.xi)
        upper = gpd_excess_partial(c, spec.xi, spec.beta)
        if side == "below":
            return upper
        return c - ez + upper
    if side == "above":
        return above
    return above - (mean - t)
