import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from riskbias.distributions import (
    Garch11,
    GpdLeftTail,
    Normal,
    RandomStream,
    StudentT,
    binomial_cdf,
    dist_cdf,
    dist_mean,
    dist_quantile,
    garch_sigma_recursion,
    garch_simulate,
    gpd_excess_partial,
    gpd_ppf,
    gpd_sf,
    partial_moment,
    sample_iid,
)
from riskbias.errors import DomainError, InfiniteMomentError, UnsupportedLawError


def mp_t_cdf(x, nu):
    # regularized incomplete beta, independent of scipy's implementation
    x, nu = mp.mpf(x), mp.mpf(nu)
    tail = mp.betainc(nu / 2, mp.mpf(1) / 2, 0, nu / (nu + x * x), regularized=True) / 2
    return float(tail if x < 0 else 1 - tail)


@pytest.mark.parametrize("nu", [3.0, 5.0, 249.0])
@pytest.mark.parametrize("x", [-4.0, -2.33, -0.5, 0.0, 1.7])
def test_student_t_cdf_against_mpmath(nu, x):
    assert dist_cdf(StudentT(nu), x) == pytest.approx(mp_t_cdf(x, nu), abs=1e-12)


def test_normal_cdf_against_mpmath():
    for x in (-5.0, -2.0, 0.3, 1.96):
        assert dist_cdf(Normal(0.0, 1.0), x) == pytest.approx(float(mp.ncdf(x)), abs=1e-14)


def test_gpd_sf_closed_form():
    xi, beta = 0.3, 0.8
    z = np.array([0.0, 0.5, 2.0, 10.0])
    expected = (1 + xi * z / beta) ** (-1 / xi)
    np.testing.assert_allclose(gpd_sf(z, xi, beta), expected, rtol=1e-14)
    assert gpd_sf(-1.0, xi, beta) == 1.0
    # negative shape: finite endpoint beta/|xi|
    assert gpd_sf(5.0, -0.2, 0.5) == 0.0


def test_gpd_ppf_inverts_sf():
    for xi in (-0.3, 0.05, 0.9, 1.19):
        q = np.linspace(0.01, 0.99, 25)
        np.testing.assert_allclose(1 - gpd_sf(gpd_ppf(q, xi, 1.3), xi, 1.3), q, atol=1e-12)


@pytest.mark.parametrize("xi", [-0.2, 0.212, 0.6])
@pytest.mark.parametrize("c", [-0.5, 0.0, 0.7, 3.0])
def test_gpd_excess_partial_against_quadrature(xi, c):
    beta = 0.869
    upper = beta / -xi if xi < 0 else np.inf
    lo = max(c, 0.0)
    val, _ = integrate.quad(lambda z: gpd_sf(z, xi, beta), lo, upper, limit=200)
    if c < 0:
        val += -c
    assert gpd_excess_partial(c, xi, beta) == pytest.approx(val, rel=1e-8, abs=1e-12)


def test_gpd_excess_partial_infinite_mean():
    with pytest.raises(InfiniteMomentError):
        gpd_excess_partial(0.0, 1.19, 0.774)


LAWS = [
    Normal(0.3, 2.0),
    StudentT(5.0, -0.1, 0.7),
    StudentT(3.0),
    GpdLeftTail(-0.978, 0.212, 0.869),
    GpdLeftTail(-2.2, 0.388, 0.545),
    GpdLeftTail(-0.40028, 1.19, 0.774),
    GpdLeftTail(0.0, -0.25, 1.0),
]


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(LAWS), st.floats(1e-6, 1 - 1e-6))
def test_quantile_cdf_inverse_consistency(law, q):
    cond = isinstance(law, GpdLeftTail)
    x = dist_quantile(law, q, conditional=cond)
    assert float(dist_cdf(law, x, conditional=cond)) == pytest.approx(q, abs=1e-10)


def test_unconditional_gpd_with_body():
    law = GpdLeftTail(-1.0, 0.05, 0.7, p=0.2, body=Normal(0.0, 1.0))
    assert float(dist_cdf(law, -1.0)) == pytest.approx(0.2, abs=1e-15)
    for q in (0.01, 0.1, 0.2, 0.5, 0.9):
        assert float(dist_cdf(law, dist_quantile(law, q))) == pytest.approx(q, abs=1e-10)
    x = np.asarray(sample_iid(law, 40_000, RandomStream(3), conditional=False))
    assert np.mean(x <= -1.0) == pytest.approx(0.2, abs=0.01)


def test_unconditional_gpd_without_body_is_rejected():
    law = GpdLeftTail(-1.0, 0.05, 0.7)
    with pytest.raises(DomainError):
        dist_quantile(law, 0.5)
    with pytest.raises(DomainError):
        sample_iid(law, 10, RandomStream(0), conditional=False)


def test_conditional_gpd_sample_moments():
    law = GpdLeftTail(-0.978, 0.212, 0.869)
    x = np.asarray(sample_iid(law, 200_000, RandomStream(11)))
    assert x.max() <= law.u
    assert x.mean() == pytest.approx(dist_mean(law), abs=0.01)


@pytest.mark.parametrize("law,t", [(Normal(0.5, 1.5), -1.0), (StudentT(5.0, 0.2, 0.8), -2.0)])
def test_partial_moments_against_quadrature(law, t):
    if isinstance(law, Normal):
        pdf = lambda x: stats.norm.pdf(x, law.mu, law.sigma)  # noqa: E731
    else:
        pdf = lambda x: stats.t.pdf(x, law.nu, loc=law.loc, scale=law.scale)  # noqa: E731
    above, _ = integrate.quad(lambda x: (x - t) * pdf(x), t, np.inf)
    below, _ = integrate.quad(lambda x: (t - x) * pdf(x), -np.inf, t)
    assert float(partial_moment(law, t, "above")) == pytest.approx(above, rel=1e-8)
    assert float(partial_moment(law, t, "below")) == pytest.approx(below, rel=1e-7)


def test_partial_moment_gpd_conditional():
    law = GpdLeftTail(-1.0, 0.3, 0.7)
    t = -2.0
    dens = lambda x: (1 + law.xi * (law.u - x) / law.beta) ** (-1 / law.xi - 1) / law.beta  # noqa: E731
    below, _ = integrate.quad(lambda x: (t - x) * dens(x), -np.inf, t)
    above, _ = integrate.quad(lambda x: (x - t) * dens(x), t, law.u)
    assert float(partial_moment(law, t, "below")) == pytest.approx(below, rel=1e-8)
    assert float(partial_moment(law, t, "above")) == pytest.approx(above, rel=1e-8)


def test_random_stream_reproducible_and_split():
    a = RandomStream(5, 1, (2,)).generator().random(4)
    b = RandomStream(5, 1, (2,)).generator().random(4)
    c = RandomStream(5, 1, (3,)).generator().random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    assert RandomStream(5, 1).substream(2) == RandomStream(5, 1, (2,))


def test_sample_array_protocol():
    s = sample_iid(Normal(), 7, RandomStream(1))
    assert len(s) == 7
    assert np.asarray(s).shape == (7,)
    assert s.meta["seed"] == 1


def test_garch_validation_and_iid_rejection():
    with pytest.raises(DomainError):
        Garch11(alpha=0.5, beta=0.5)
    with pytest.raises(UnsupportedLawError):
        dist_cdf(Garch11(), 0.0)


def test_garch_recursion_matches_loop():
    x = RandomStream(2).generator().normal(0, 0.01, 300)
    omega, a, b, s0 = 2e-5, 0.07, 0.9, 0.012
    s2 = [s0 * s0]
    for v in x:
        s2.append(omega + a * v * v + b * s2[-1])
    np.testing.assert_allclose(garch_sigma_recursion(x, omega, a, b, s0), s2, rtol=1e-12)


def test_garch_simulation_dynamics():
    spec = Garch11()
    x, sig = garch_simulate(spec, 60_000, RandomStream(4))
    x, sig = np.asarray(x), np.asarray(sig)
    assert sig[0] == spec.sigma_init
    # path and sigma obey the recursion exactly
    np.testing.assert_allclose(sig[1:] ** 2, spec.omega + spec.alpha * x[:-1] ** 2 + spec.beta * sig[:-1] ** 2,
                               rtol=1e-12)
    assert np.var(x[1000:]) == pytest.approx(spec.stationary_variance, rel=0.08)


def mp_binom_cdf(n, p, k):
    p = mp.mpf(p)
    return float(mp.fsum(mp.binomial(n, i) * p**i * (1 - p) ** (n - i) for i in range(k + 1)))


@pytest.mark.parametrize("n,p,k", [(50, 0.05, 4), (50, 0.05, 5), (250, 0.01, 4), (50, 0.075, 6), (42, 0.1, 8)])
def test_binomial_cdf_against_mpmath(n, p, k):
    assert binomial_cdf(n, p, k) == pytest.approx(mp_binom_cdf(n, p, k), rel=1e-12)


def test_binomial_cdf_edges():
    assert binomial_cdf(10, 0.0, 0) == 1.0
    assert binomial_cdf(10, 1.0, 9) == 0.0
    assert binomial_cdf(10, 0.3, 10) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        binomial_cdf(10, 0.3, 11)
