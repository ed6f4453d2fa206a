import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy import stats

from riskbias.backtest import (
    BacktestConfig,
    EstimatorSpec,
    dual_level,
    make_report,
    ngz_threshold,
    run_backtest,
    running_statistic,
    secure,
    stat_DM,
    stat_G,
    stat_H,
    stat_MR_SD,
    stat_NGZ,
    stat_S,
    stat_T,
    traffic_zone,
)
from riskbias.distributions import Garch11, GpdLeftTail, Normal, RandomStream, StudentT, garch_simulate, sample_iid
from riskbias.errors import ConfigurationError
from riskbias.risk_measures import RiskSpec, risk_true


def test_small_statistics():
    assert stat_T([1, -1, 1, 1]) == 0.25
    assert stat_T([1, 2, 3]) == 0.0
    assert stat_S([-1.0], 0.05) == pytest.approx(0.95)
    assert stat_S([1.0], 0.05) == pytest.approx(0.05)
    assert stat_G([3, -1, 1, 1]) == 0.25
    assert stat_G([1, 2]) == 0.0
    assert stat_H([2.0, -1.0]) == pytest.approx(1 / 3)
    assert stat_H([-2.0, -1.0]) == 1.0
    assert stat_H([2.0, 0.0]) == 0.0


def test_breaches_are_strict():
    assert stat_T([0.0, 0.0, -1e-300]) == pytest.approx(1 / 3)


def test_h_infimum_form():
    # H = inf{alpha: P/L >= (1 - alpha)/alpha}, scanned on a fine grid
    y = np.random.default_rng(0).normal(0.5, 1.0, 300)
    p, l = y[y > 0].sum(), -y[y < 0].sum()
    grid = np.linspace(1e-6, 1, 200_001)
    inf = grid[np.argmax(p / l >= (1 - grid) / grid)]
    assert stat_H(y) == pytest.approx(inf, abs=1e-5)


def test_ngz_thresholds_and_ideal_rates():
    assert ngz_threshold(50, 0.05) == 5
    ideal = [1 - stats.binom.cdf(ngz_threshold(50, a) - 1, 50, a) for a in (0.05, 0.075, 0.10)]
    assert ideal[0] == pytest.approx(0.11, abs=0.01)
    assert ideal[1] == pytest.approx(0.08, abs=0.01)
    assert ideal[2] == pytest.approx(0.05, abs=0.01)


def ngz_brute(y, N, alpha):
    z = ngz_threshold(N, alpha)
    b = [v < 0 for v in y]
    m = len(y)
    # windows [s, s + N - 1] for s = 1..m-N, i.e. zero-based starts 0..m-N-1
    return sum(sum(b[s:s + N]) >= z for s in range(m - N)) / (m - N)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(51, 400), st.sampled_from([0.05, 0.075, 0.1]))
def test_ngz_matches_brute_force(seed, m, alpha):
    y = np.random.default_rng(seed).normal(1.5, 1.0, m)
    assert stat_NGZ(y, 50, alpha) == pytest.approx(ngz_brute(y, 50, alpha), abs=1e-15)


def test_ngz_zero_breaches():
    assert stat_NGZ(np.ones(300), 50, 0.05) == 0.0


def test_dm_statistic():
    rng = np.random.default_rng(1)
    x = rng.normal(size=500)
    a, b = secure(x, 1.5), secure(x, 2.0)
    assert stat_DM(a, a, 0.05).statistic == 0.0
    assert stat_DM(a, a, 0.05).p_value == 1.0
    res = stat_DM(a, b, 0.05)
    s = lambda y: -((y < 0) - 0.05) * y  # noqa: E731
    d = s(a.y) - s(b.y)
    expected = math.sqrt(500) * d.mean() / d.std(ddof=1)
    assert res.statistic == pytest.approx(expected, rel=1e-12)
    assert res.p_value == pytest.approx(2 * stats.norm.sf(abs(expected)), rel=1e-10)
    assert stat_DM(b, a, 0.05).statistic == pytest.approx(-expected, rel=1e-12)


def test_dm_rejects_different_streams():
    with pytest.raises(ConfigurationError):
        stat_DM(secure([1.0, 2.0], 1.0), secure([1.0, 3.0], 1.0), 0.05)


def test_dm_degenerate_flag():
    x = np.array([1.0, 2.0, 3.0])
    r = stat_DM(secure(x, 1.0), secure(x, 2.0), 0.05)
    assert r.degenerate


def dual_level_oracle(y, family):
    # scan j = 0..m-1: level j/m is in the interval that uses the first j + 1 order statistics
    s = sorted(y)
    m = len(s)
    for j in range(m):
        risk = -s[j] if family == "VaR" else -sum(s[: j + 1]) / (j + 1)
        if risk <= 0:
            return j / m
    return 1.0


def test_duality_fuzz_10k():
    rng = np.random.default_rng(2024)
    for i in range(10_000):
        m = int(rng.integers(1, 60))
        kind = i % 4
        if kind == 0:
            y = rng.normal(0.5, 1.0, m)
        elif kind == 1:
            y = rng.integers(-3, 4, m).astype(float)  # ties and exact zeros
        elif kind == 2:
            y = rng.standard_t(2, m) + 1.0
        else:
            y = -np.abs(rng.normal(size=m)) if i % 8 == 3 else np.abs(rng.normal(size=m))
        assert dual_level(y, "VaR") == stat_T(y)
        assert dual_level(y, "ES") == stat_G(y)
        if i % 50 == 0:
            assert dual_level(y, "VaR") == dual_level_oracle(y, "VaR")
            assert dual_level(y, "ES") == dual_level_oracle(y, "ES")


@settings(max_examples=300, deadline=None)
@given(hnp.arrays(float, st.integers(1, 40), elements=st.floats(-1e6, 1e6)))
def test_duality_property(y):
    assert dual_level(y, "VaR") == stat_T(y) == dual_level_oracle(y, "VaR")
    assert dual_level(y, "ES") == stat_G(y)


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(float, st.integers(51, 120), elements=st.floats(-10, 10)), st.floats(0.01, 5))
def test_statistics_in_unit_interval_and_monotone(y, c):
    for v in (stat_T(y), stat_G(y), stat_H(y), stat_NGZ(y, 50, 0.05)):
        assert 0.0 <= v <= 1.0
    assert stat_T(y + c) <= stat_T(y)
    assert stat_G(y + c) <= stat_G(y)


def test_traffic_zones():
    def series(k):
        y = np.ones(250)
        y[:k] = -1
        return y

    assert traffic_zone(series(4)) == "green"
    assert traffic_zone(series(5)) == "yellow"
    assert traffic_zone(series(9)) == "yellow"
    assert traffic_zone(series(10)) == "red"
    with pytest.warns(UserWarning):
        traffic_zone(np.ones(100))


def test_mr_sd():
    assert stat_MR_SD(secure(np.zeros(5), 2.5)) == (2.5, 0.0)
    rho = np.array([1.0, 2.0, 4.0])
    assert stat_MR_SD(rho)[1] == pytest.approx(np.std(rho, ddof=1))


def _gauss_data(n, m, seed):
    return np.asarray(sample_iid(Normal(0, 1), n + m, RandomStream(seed)))


def test_secured_identity_and_true_constant():
    n, m = 250, 500
    data = _gauss_data(n, m, 1)
    for kind in ("true", "plugin", "empirical", "unbiased"):
        s = run_backtest(data, BacktestConfig(n, m, RiskSpec("VaR", 0.01), EstimatorSpec(kind), Normal(0, 1)))
        assert np.array_equal(s.y, s.x + s.rho)
        assert len(s) == m
        assert np.array_equal(s.x, data[n:])
    s = run_backtest(data, BacktestConfig(n, m, RiskSpec("VaR", 0.01), EstimatorSpec("true"), Normal(0, 1)))
    assert np.all(s.rho == s.rho[0])


def test_windows_use_trailing_points_only():
    n, m = 30, 40
    data = _gauss_data(n, m, 2)
    s = run_backtest(data, BacktestConfig(n, m, RiskSpec("VaR", 0.05), EstimatorSpec("plugin"), Normal(0, 1),
                                          ngz_window=10))
    for t in (0, 17, m - 1):
        w = data[t:t + n]
        assert s.rho[t] == pytest.approx(-(w.mean() + w.std(ddof=1) * stats.norm.ppf(0.05)), rel=1e-12)


def test_length_and_combination_errors():
    with pytest.raises(ConfigurationError):
        run_backtest(np.zeros(10), BacktestConfig(5, 6, RiskSpec("VaR", 0.05), EstimatorSpec("plugin"), Normal()))
    data = _gauss_data(50, 60, 3)
    with pytest.raises(ConfigurationError):
        run_backtest(data, BacktestConfig(50, 60, RiskSpec("EVaR", 0.05), EstimatorSpec("unbiased"), Normal(),
                                          ngz_window=50))
    with pytest.raises(ConfigurationError):
        EstimatorSpec("magic")


def test_gaussian_plugin_exception_rate():
    n, m = 250, 20_000
    data = _gauss_data(n, m, 4)
    s = run_backtest(data, BacktestConfig(n, m, RiskSpec("VaR", 0.01), EstimatorSpec("plugin"), Normal(0, 1)))
    assert stat_T(s) == pytest.approx(0.0105, abs=0.002)


def test_scale_invariance_of_statistics():
    n, m = 100, 600
    data = _gauss_data(n, m, 5)
    for kind in ("plugin", "empirical"):
        cfg = BacktestConfig(n, m, RiskSpec("VaR", 0.05), EstimatorSpec(kind), Normal(0, 1))
        a, b = run_backtest(data, cfg), run_backtest(3.7 * data, cfg)
        assert stat_T(a) == stat_T(b)
        assert stat_G(a) == stat_G(b)
        assert stat_H(a) == pytest.approx(stat_H(b), rel=1e-12)
        assert stat_NGZ(a, 50, 0.05) == stat_NGZ(b, 50, 0.05)


def test_true_gpd_score_matches_closed_form():
    # for y = q - Z with P(Z > q) = alpha: E[score] = alpha q / (1 - xi)
    law = GpdLeftTail(-0.978, 0.212, 0.869)
    n, m = 50, 200_000
    data = np.asarray(sample_iid(law, n + m, RandomStream(6)))
    s = run_backtest(data, BacktestConfig(n, m, RiskSpec("VaR", 0.05, True), EstimatorSpec("true"), law))
    q = law.beta * (0.05 ** -law.xi - 1) / law.xi
    scores = -((s.y < 0) - 0.05) * s.y
    assert stat_S(s, 0.05) == pytest.approx(0.05 * q / (1 - law.xi), abs=4 * scores.std() / math.sqrt(m))
    assert stat_MR_SD(s) == (pytest.approx(4.6147, abs=1e-4), 0.0)


def test_gpd_empirical_uses_conditional_level():
    law = GpdLeftTail(-1.0, 0.05, 0.7, p=0.2)
    n, m = 50, 200
    data = np.asarray(sample_iid(law, n + m, RandomStream(7)))
    cond = run_backtest(data, BacktestConfig(n, m, RiskSpec("VaR", 0.05, True), EstimatorSpec("empirical"), law))
    uncond = run_backtest(data, BacktestConfig(n, m, RiskSpec("VaR", 0.01), EstimatorSpec("empirical"), law))
    np.testing.assert_allclose(cond.rho, uncond.rho, rtol=1e-14)


def test_student_t_backtest():
    law = StudentT(5.0)
    n, m = 250, 2000
    data = np.asarray(sample_iid(law, n + m, RandomStream(8)))
    s = run_backtest(data, BacktestConfig(n, m, RiskSpec("EVaR", 0.00145), EstimatorSpec("true"), law))
    assert s.rho[0] == pytest.approx(risk_true(law, RiskSpec("EVaR", 0.00145)))
    p = run_backtest(data, BacktestConfig(n, m, RiskSpec("VaR", 0.01), EstimatorSpec("plugin"), law))
    assert np.all(np.isfinite(p.rho))


def test_garch_backtest_small():
    law = Garch11()
    n, m = 250, 30
    x, sig = garch_simulate(law, n + m, RandomStream(9))
    risk = RiskSpec("VaR", 0.01)

    def cfg(est):
        return BacktestConfig(n, m, risk, est, law, ngz_window=10)

    true = run_backtest(x, cfg(EstimatorSpec("true")), sigma_path=sig)
    np.testing.assert_allclose(true.rho, -np.asarray(sig)[n:] * stats.norm.ppf(0.01))
    plug = run_backtest(x, cfg(EstimatorSpec("plugin")))
    assert plug.fit_failures == 0
    assert np.all(plug.rho > 0)
    stride = run_backtest(x, cfg(EstimatorSpec("plugin", refit_stride=10)))
    assert stride.rho[0] == plug.rho[0]
    with pytest.raises(ConfigurationError):
        run_backtest(x, cfg(EstimatorSpec("true")))


def test_running_statistic_matches_prefix():
    y = np.random.default_rng(3).normal(0.3, 1, 400)
    cps = [50, 133, 400]
    for name, fn in (("T", stat_T), ("G", stat_G), ("H", stat_H), ("S", lambda v: stat_S(v, 0.05))):
        got = running_statistic(y, name, cps, alpha=0.05)
        np.testing.assert_allclose(got, [fn(y[:k]) for k in cps], rtol=1e-12)


def test_report_fields():
    x = np.random.default_rng(4).normal(size=250)
    ref, s = secure(x, 2.0, "b-true"), secure(x, 2.3, "b")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        r = make_report(s, 0.01, reference=ref)
    assert r.zone in ("green", "yellow", "red")
    assert r.DM.statistic == pytest.approx(stat_DM(ref, s, 0.01).statistic)
    assert r.MR == pytest.approx(2.3)
