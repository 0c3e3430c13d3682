import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bogodisp.fitting import (
    FitError,
    bound_certificate,
    default_window,
    fit_decay,
    gronwall_rhs,
    wrap_time,
)
from bogodisp.grid import gaussian, make_grid


def test_exact_power_law():
    t = np.linspace(0, 50, 200)
    f = fit_decay(t, (1 + t) ** -1.5)
    assert abs(f.exponent - 1.5) <= 1e-9
    assert np.isclose(f.r2, 1.0)
    assert not f.advisory


def test_noisy_half_power():
    rng = np.random.default_rng(12345)
    t = np.linspace(0, 40, 400)
    y = 3 * (1 + t) ** -0.5 * (1 + 0.01 * rng.standard_normal(t.size))
    f = fit_decay(t, y, (5, 40))
    assert abs(f.exponent - 0.5) <= 0.02
    assert f.t_lo >= 5 and f.t_hi <= 40


def test_constant_series():
    t = np.linspace(0, 10, 30)
    f = fit_decay(t, np.full(30, 2.5))
    assert abs(f.exponent) <= 1e-9
    assert f.r2 == 1.0


def test_fit_errors():
    t = np.linspace(0, 10, 30)
    with pytest.raises(FitError):
        fit_decay(t, -np.ones(30))
    with pytest.raises(FitError):
        fit_decay(t[:9], np.ones(9))
    with pytest.raises(FitError):
        fit_decay(t, np.ones(30), (5, 5.1))
    with pytest.raises(FitError):
        fit_decay(t, np.ones(29))


def test_poor_fit_is_advisory():
    t = np.linspace(0, 30, 60)
    y = 2 + np.sin(t)
    assert fit_decay(t, y).advisory


def test_default_window():
    assert default_window(1.0, 50.0) == (5.0, 45.0)
    assert default_window(10.0, 50.0) == (20.0, 45.0)


def test_wrap_time_scaling():
    a = gaussian(make_grid(1, 512, 64.0), 1.0)
    b = gaussian(make_grid(1, 1024, 128.0), 1.0)
    c = gaussian(make_grid(1, 1024, 128.0), 2.0)
    ta = wrap_time(a.grid, a.values)
    tb = wrap_time(b.grid, b.values)
    tc = wrap_time(c.grid, c.values)
    assert np.isclose(tb, 2 * ta)
    assert np.isclose(tc, 2 * tb, rtol=0.02)


def test_zero_coefficient_certificates():
    t = np.linspace(0, 5, 20)
    z = np.zeros_like(t)
    cg = bound_certificate("gamma_op", t, np.ones_like(t), z)
    cs = bound_certificate("sigma_hs", t, z, z, z)
    assert cg.passed and np.allclose(cg.rhs, 1.0)
    assert cs.passed and np.allclose(cs.rhs, 0.0)


def test_gronwall_rhs_constant_coefficients():
    # constant ||K||_op = a, ||K||_HS = b: rhs = 2 b (e^{a t} - 1) / a and 1 + 2 (e^{a t} - 1)
    t = np.linspace(0, 2, 2001)
    a, b = 0.7, 0.3
    rs = gronwall_rhs("sigma_hs", t, np.full_like(t, a), np.full_like(t, b))
    rg = gronwall_rhs("gamma_op", t, np.full_like(t, a))
    assert np.allclose(rs, 2 * b * np.expm1(a * t) / a, rtol=1e-6)
    assert np.allclose(rg, 1 + 2 * np.expm1(a * t), rtol=1e-6)


def test_inflated_lhs_fails():
    t = np.linspace(0, 5, 50)
    k = 0.1 / (1 + t)
    sig = 0.5 * gronwall_rhs("sigma_hs", t, k, k)
    assert bound_certificate("sigma_hs", t, sig, k, k).passed
    bad = bound_certificate("sigma_hs", t, 10 * sig + 1e-3, k, k)
    assert not bad.passed
    assert bad.margin < 0


def test_misaligned_series():
    t = np.linspace(0, 1, 10)
    with pytest.raises(FitError):
        bound_certificate("sigma_hs", t, np.zeros(10), np.zeros(9), np.zeros(10))
    with pytest.raises(FitError):
        bound_certificate("sigma_hs", t, np.zeros(10), np.zeros(10))
    with pytest.raises(FitError):
        bound_certificate("bogus", t, np.zeros(10), np.zeros(10))


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 0.5), st.floats(0, 0.5), st.floats(0.5, 2.0))
def test_loosening_slack_never_flips_pass(s1, ds, scale):
    t = np.linspace(0, 3, 30)
    k = 0.2 * np.exp(-t)
    lhs = scale * gronwall_rhs("sigma_hs", t, k, k)
    tight = bound_certificate("sigma_hs", t, lhs, k, k, slack=s1)
    loose = bound_certificate("sigma_hs", t, lhs, k, k, slack=s1 + ds)
    assert not tight.passed or loose.passed


def test_relative_margin():
    t = np.linspace(0, 1, 11)
    k = np.full_like(t, 0.5)
    rhs = gronwall_rhs("sigma_hs", t, k, k)
    c = bound_certificate("sigma_hs", t, 0.5 * rhs, k, k)
    assert np.isclose(c.relative_margin, 0.55)
    assert bound_certificate("sigma_hs", t, 2 * rhs, k, k).relative_margin < 0
