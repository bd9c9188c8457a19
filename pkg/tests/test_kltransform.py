import math
import warnings

import numpy as np
import pytest

from gl2harmonic.kltransform import (
    CLASSICAL_CALIBRATION,
    HalfLineFunction,
    M_image,
    apply_D,
    apply_M,
    bessel_in_order,
    bispectral_report,
    calibrate,
    gaussian_cos,
    half_line_family,
    half_line_grid,
    kl_direct,
    kl_inverse,
    power_exp,
    s_grid,
    strip_family,
)
from gl2harmonic.numerics import SampledFunction
from gl2harmonic.specfun import AccuracyWarning, macdonald_bessel


@pytest.fixture(scope="module")
def grids():
    return s_grid(80), half_line_grid(200)


def test_kl_direct_of_exp_minus_x_minus_inverse_x(grids):
    sg, xg = grids
    out = kl_direct(power_exp(0, 1, 1), sg, xg)
    v = np.abs(out.values)
    assert np.all(np.isfinite(v))
    # Kf(s) carries the factor exp(-pi s / 2) of the kernel
    hi = sg.nodes > 10
    assert np.max(v[hi]) < 1e-6 * np.max(v)
    assert out.tails["low"] < 1e-2 and out.tails["high"] < 1e-2


def test_kl_direct_linearity_and_zero(grids):
    sg, xg = grids
    f, g = half_line_family()[1], half_line_family()[4]
    h = HalfLineFunction(lambda x: 2 * f(x) - 0.5 * g(x), "combo")
    np.testing.assert_allclose(kl_direct(h, sg, xg).values,
                               2 * kl_direct(f, sg, xg).values - 0.5 * kl_direct(g, sg, xg).values, atol=1e-14)
    zero = HalfLineFunction(lambda x: 0 * x, "zero")
    assert np.all(kl_direct(zero, sg, xg).values == 0)
    assert np.all(kl_inverse(SampledFunction([sg], np.zeros(len(sg))), xg, 0.6).values == 0)


def test_kl_inverse_rejects_nonpositive_s(grids):
    _, xg = grids
    from gl2harmonic.numerics import gauss_legendre

    g = gauss_legendre(8, -1, 1)
    with pytest.raises(ValueError):
        kl_inverse(SampledFunction([g], np.ones(8)), xg, 1.0)


def test_tail_warning_for_slow_decay():
    sg = s_grid(8)
    slow = HalfLineFunction(lambda x: 1 / (1 + x), "flat-at-zero")
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        kl_direct(slow, sg, 64)
    assert any(issubclass(x.category, AccuracyWarning) for x in w)


def test_apply_D_on_monomials():
    x = np.linspace(0.2, 3.0, 9)
    for alpha in (0.5, 1.0, 2.5, -1.0):
        f = lambda t, a=alpha: t**a  # noqa: E731
        np.testing.assert_allclose(apply_D(f, x), (alpha**2 - x**2) * x**alpha, rtol=1e-8)
    with pytest.raises(ValueError):
        apply_D(np.exp, np.array([0.0]))


def test_apply_D_linear():
    x = np.linspace(0.3, 2.0, 5)
    f, g = np.exp, np.cos
    np.testing.assert_allclose(apply_D(lambda t: 3 * f(t) + g(t), x), 3 * apply_D(f, x) + apply_D(g, x), rtol=1e-7)


def test_apply_D_on_macdonald_is_minus_tau_squared():
    x = np.linspace(0.2, 5.0, 13)
    for tau in (0.5, 1.0, 2.0):
        K = macdonald_bessel(tau, x)
        dK = apply_D(lambda t: macdonald_bessel(tau, t), x,
                     df=lambda t: macdonald_bessel(tau, t, deriv=1), d2f=lambda t: macdonald_bessel(tau, t, deriv=2))
        assert np.max(np.abs(dK + tau**2 * K)) < 1e-8 * np.max(np.abs(K))


def test_apply_M_on_gaussian():
    s = np.linspace(0.1, 4.0, 30)
    F = gaussian_cos(1.0, 0.0)
    ref = -(2 / s) * np.exp(1 - s**2) * np.sin(2 * s)
    np.testing.assert_allclose(apply_M(F, s), ref, rtol=1e-13, atol=1e-300)
    with pytest.raises(ValueError):
        apply_M(F, 0.0)


def test_apply_M_parity():
    s = np.linspace(0.2, 5.0, 11)
    for F in strip_family():
        np.testing.assert_allclose(apply_M(F, -s), apply_M(F, s), rtol=1e-12, atol=1e-300)


def test_apply_M_on_bessel_in_order_is_two_over_x():
    x0 = 1.3
    F = bessel_in_order(x0)
    s = np.array([0.5, 1.0, 2.0, 4.0])
    K = macdonald_bessel(s, x0)
    m = apply_M(F, s)
    assert np.max(np.abs(m + (2 / x0) * K)) < 1e-8 * np.max(np.abs(K))


def test_strip_certificates():
    for F in strip_family():
        assert F.certificate_margin() <= 1
        G = M_image(F)
        assert G.certificate_margin() <= 1
    with pytest.raises(ValueError):
        gaussian_cos(-1.0, 0.0)


def test_bispectral_signs_consistent():
    rep = bispectral_report(xs=np.linspace(0.2, 5.0, 7))
    assert rep.d_consistent and rep.m_consistent
    assert rep.d_sign == -1 and rep.m_sign == -1
    assert rep.passes()
    assert rep.to_csv().splitlines()[0].startswith("x,tau")


def test_small_calibration():
    fams = half_line_family()[:3]
    rep = calibrate(fams, s_grid(60), half_line_grid(160))
    assert rep.spread < 1e-3
    assert abs(rep.constant / CLASSICAL_CALIBRATION - 1) < 1e-3
    # coarse grids; the default grids reach 1e-4 in the acceptance run
    assert max(rep.round_trip.values()) < 5e-3
    assert math.isfinite(rep.parseval_consistency)
