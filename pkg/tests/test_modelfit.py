import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy import integrate
from scipy import stats as sstats

from plcnoise.exceptions import DegenerateSeriesError, FitError
from plcnoise.modelfit import (BurstHistogram, TLocationScale, _simplex_minimize, best_fit,
                               burst_lengths, derivative_mass_report, difference,
                               family_logpdf, fit_t_location_scale, geometric_fit,
                               survival_linearity, t_loglik, t_loglik_grad, undifference)
from plcnoise.synthesis import sample_t_location_scale

# scipy.stats.t(2.87, loc=1.8e-3, scale=3.47): cdf(3.5) - cdf(-3.5)
P_ABS_LE_3_PUBLISHED = 0.6095280681073998


def test_difference_examples():
    assert difference([5, 5, 6, 4]).tolist() == [0, 1, -2]
    assert np.all(difference(np.full(10, 3.3)) == 0)
    with pytest.raises(ValueError):
        difference([1.0])


@given(hnp.arrays(float, st.integers(2, 100), elements=st.integers(-1000, 1000).map(float)))
def test_difference_roundtrip(x):
    np.testing.assert_array_equal(undifference(difference(x), x[0]), x)
    d = difference(x)
    np.testing.assert_array_equal(difference(undifference(d, 7.0)), d)


@pytest.mark.parametrize("nu", [1.0, 2.87, 5.0, 30.0, 1e4])
def test_density_normalization(nu):
    t = TLocationScale(0.3, 2.0, nu)
    lo, hi = t.mu - 50 * t.sigma, t.mu + 50 * t.sigma
    inner, _ = integrate.quad(t.pdf, lo, hi, limit=400, points=[t.mu])
    assert inner == pytest.approx(float(t.cdf(hi) - t.cdf(lo)), abs=1e-9)
    full = sum(integrate.quad(t.pdf, a, b, limit=400)[0]
               for a, b in ((-np.inf, lo), (lo, hi), (hi, np.inf)))
    assert abs(full - 1) < 1e-6
    if nu >= 5:
        assert abs(inner - 1) < 1e-6


def test_logpdf_matches_scipy():
    x = np.linspace(-30, 30, 101)
    t = TLocationScale(1.8e-3, 3.47, 2.87)
    np.testing.assert_allclose(t.logpdf(x), sstats.t.logpdf(x, 2.87, 1.8e-3, 3.47), rtol=1e-12)
    np.testing.assert_allclose(t.ppf([0.1, 0.5, 0.9]),
                               sstats.t.ppf([0.1, 0.5, 0.9], 2.87, 1.8e-3, 3.47), rtol=1e-10)


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(0)
    x = sample_t_location_scale(0.0, 1.0, 3.0, rng, 2000)
    for _ in range(20):
        p = np.array([rng.uniform(-0.5, 0.5), rng.uniform(0.5, 2.0), rng.uniform(1.0, 10.0)])
        g = t_loglik_grad(p, x)
        fd = np.empty(3)
        for i in range(3):
            h = 1e-5 * max(1.0, abs(p[i]))
            e = np.zeros(3)
            e[i] = h
            fd[i] = (t_loglik(p + e, x) - t_loglik(p - e, x)) / (2 * h)
        scale = np.maximum(np.abs(fd), 1.0)
        assert np.all(np.abs(g - fd) / scale < 1e-5)


def test_recovery_t():
    rng = np.random.default_rng(20240601)
    x = sample_t_location_scale(0.0, 1.0, 3.0, rng, 10**5)
    f = fit_t_location_scale(x)
    assert abs(f.mu) <= 0.02
    assert 0.97 <= f.sigma <= 1.03
    assert 2.8 <= f.nu <= 3.2
    assert f.loglik == pytest.approx(t_loglik((f.mu, f.sigma, f.nu), x), rel=1e-12)


def test_local_optimality():
    rng = np.random.default_rng(3)
    x = sample_t_location_scale(0.5, 2.0, 4.0, rng, 20_000)
    f = fit_t_location_scale(x)
    best = t_loglik((f.mu, f.sigma, f.nu), x)
    for _ in range(100):
        k = 1 + rng.uniform(-0.1, 0.1, 3)
        p = (f.mu * k[0] + rng.uniform(-0.01, 0.01), f.sigma * k[1], f.nu * k[2])
        assert t_loglik(p, x) <= best + 1e-6


def test_gaussian_data_large_nu():
    x = np.random.default_rng(1).normal(size=10**5)
    f = fit_t_location_scale(x)
    assert f.nu >= 50
    sel = best_fit(x)
    g = sel.get("gaussian").loglik
    assert abs(sel.get("t-location-scale").loglik - g) <= 1e-3 * abs(g)
    assert sel.near_tie


def test_fit_input_errors():
    with pytest.raises(DegenerateSeriesError):
        fit_t_location_scale(np.full(100, 2.0))
    with pytest.raises(ValueError):
        fit_t_location_scale(np.arange(50.0))
    with pytest.raises(DegenerateSeriesError):
        best_fit(np.full(100, 1.0))


def test_non_convergence_carries_best():
    with pytest.raises(FitError) as ei:
        _simplex_minimize(lambda v: float(np.sum((v - 3) ** 2)), [0.0, 0.0],
                          np.array([1.0, 1.0]), max_restarts=0, maxiter=3)
    assert ei.value.best is not None


def test_best_fit_prefers_t():
    rng = np.random.default_rng(5)
    x = sample_t_location_scale(0.0, 3.47, 2.87, rng, 10**5)
    sel = best_fit(x)
    assert sel.winner == "t-location-scale"
    assert sel.winner == max(sel.candidates, key=lambda c: c.loglik).family
    for c in sel.candidates:
        assert c.aic == pytest.approx(2 * c.n_params - 2 * c.loglik)
        ll = float(np.sum(family_logpdf(c.family, c.params, x)))
        assert ll == pytest.approx(c.loglik, rel=1e-9)


def test_best_fit_records_failures():
    x = np.random.default_rng(0).normal(size=500)
    sel = best_fit(x, ("gaussian", "nonsense"))
    assert sel.winner == "gaussian"
    assert "nonsense" in sel.failures
    with pytest.raises(ValueError):
        best_fit(x, ())


def test_burst_examples():
    h = burst_lengths([1, 1, 1, 2, 2, 1], 0)
    assert h.counts == {2: 1, 1: 1}
    c = burst_lengths(np.full(50, 4.0), 2.0)
    assert c.counts == {49: 1}
    assert c.censored


@given(hnp.arrays(float, st.integers(2, 200), elements=st.integers(0, 6).map(float)),
       st.sampled_from([0.0, 1.0, 2.0, 3.0]))
def test_burst_mass_invariant(x, thr):
    h = burst_lengths(x, thr)
    steady = int(np.sum(np.abs(np.diff(x)) <= thr))
    assert h.steady_steps == steady
    assert h.steady_steps <= len(x)
    assert all(k >= 1 for k in h.counts)


def test_bernoulli_runs_geometric():
    rng = np.random.default_rng(9)
    for p in (0.3, 0.5, 0.8):
        flags = rng.random(400_000) < p
        x = np.cumsum(np.where(flags, 0.0, 10.0))
        h = burst_lengths(np.r_[0.0, x], 0.0)
        g = geometric_fit(h)
        assert g.p == pytest.approx(1 - p, abs=0.01)
        assert g.p_value > 0.01


def test_geometric_exact_histogram():
    n, p = 10**5, 0.5
    counts, left = {}, n
    k = 1
    while left > 0:
        c = int(round(n * p * (1 - p) ** (k - 1)))
        c = min(max(c, 1), left)
        counts[k] = c
        left -= c
        k += 1
    h = BurstHistogram(0.0, counts, 0)
    g = geometric_fit(h)
    assert 0.497 <= g.p <= 0.503
    assert g.p_value > 0.01 and g.reliable


def test_geometric_degenerate_and_small():
    g = geometric_fit(BurstHistogram(0.0, {1: 100}, 100))
    assert g.p == 1.0 and not g.reliable
    with pytest.raises(ValueError):
        geometric_fit(BurstHistogram(0.0, {1: 10, 2: 5}, 30))


def test_survival_nonincreasing_and_r2():
    h = BurstHistogram(0.0, {1: 50, 2: 25, 3: 12, 4: 6, 5: 3, 6: 2}, 0)
    ks, s = h.survival()
    assert s.tolist() == [98, 48, 23, 11, 5, 2]
    assert survival_linearity(h, 1, 6, "semilog") > 0.99


def test_derivative_mass():
    assert derivative_mass_report(np.zeros(10)) == {"p_zero": 1.0, "p_abs_le_1": 1.0,
                                                    "p_abs_le_3": 1.0}
    rng = np.random.default_rng(4)
    d = np.round(sample_t_location_scale(1.8e-3, 3.47, 2.87, rng, 10**6))
    m = derivative_mass_report(d, resolution=1.0)
    assert m["p_abs_le_3"] == pytest.approx(P_ABS_LE_3_PUBLISHED, abs=3e-3)
    v, c = np.unique(d, return_counts=True)
    assert derivative_mass_report(v, 1.0, c) == m
    with pytest.raises(ValueError):
        derivative_mass_report([])


def test_t_to_dict_schema():
    d = TLocationScale(0.0, 1.0, 3.0, -10.0, 5).to_dict()
    assert set(d) == {"family", "mu", "sigma", "nu", "loglik", "n"}
    assert not math.isnan(d["loglik"])
