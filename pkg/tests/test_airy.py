import mpmath as mp
import numpy as np
import pytest

from oslab.airy import AI_AT_ZERO, a0, airy_ai, airy_ai_deriv
from oslab.errors import AiryRangeError


def _maclaurin_ai(z, terms=120, second_derivative=False):
    """Series oracle Ai = c1 f(z) - c2 z g(z); optionally its term-wise Ai''."""
    from math import gamma

    c1 = 3.0 ** (-2.0 / 3.0) / gamma(2.0 / 3.0)
    c2 = 3.0 ** (-1.0 / 3.0) / gamma(1.0 / 3.0)
    # f = sum a_k z^{3k},  g-part = sum b_k z^{3k+1}
    val = 0.0 + 0.0j
    a = 1.0 + 0.0j
    b = 1.0 + 0.0j
    for k in range(terms):
        if second_derivative:
            p = 3 * k
            val += c1 * a * (p * (p - 1)) * z ** max(p - 2, 0)
            p = 3 * k + 1
            val -= c2 * b * (p * (p - 1)) * z ** (p - 2) if p >= 2 else 0.0
        else:
            val += c1 * a * z ** (3 * k) - c2 * b * z ** (3 * k + 1)
        a = a * 1.0 / ((3 * k + 3) * (3 * k + 2))
        b = b * 1.0 / ((3 * k + 4) * (3 * k + 3))
    return val


def _mpmath_ai(z):
    return complex(mp.airyai(mp.mpc(z.real, z.imag)))


def test_value_at_zero():
    assert abs(airy_ai(0.0) - AI_AT_ZERO) <= 1e-14
    assert abs(airy_ai(0.0) - _maclaurin_ai(0.0)) <= 1e-14


def test_against_series_oracle_small_disk():
    # pure double-precision series holds full relative accuracy up to |z| ~ 3
    rng = np.random.default_rng(5)
    for _ in range(40):
        z = complex(rng.uniform(-3, 3), rng.uniform(-2, 2))
        ref = _maclaurin_ai(z)
        assert abs(airy_ai(z) - ref) <= 1e-10 * max(abs(ref), 1e-30)


def test_against_highprec_series_in_contract_disk():
    # arbitrary-precision series oracle covers the full |z| <= 8 contract
    rng = np.random.default_rng(17)
    for _ in range(40):
        r = rng.uniform(0, 8)
        th = rng.uniform(-np.pi, np.pi)
        z = r * np.exp(1j * th)
        ref = _mpmath_ai(z)
        assert abs(airy_ai(z) - ref) <= 1e-10 * max(abs(ref), 1e-300)


def test_outer_annulus_accuracy():
    # 8 < |z| <= 50 with |arg z| < 2pi/3: 1e-8 relative per the contract
    rng = np.random.default_rng(23)
    for _ in range(25):
        r = rng.uniform(8.0, 50.0)
        th = rng.uniform(-2 * np.pi / 3 * 0.98, 2 * np.pi / 3 * 0.98)
        z = r * np.exp(1j * th)
        ref = _mpmath_ai(z)
        if abs(ref) < 1e-290:
            continue
        assert abs(airy_ai(z) - ref) <= 1e-8 * abs(ref)


def test_asymptotic_ratio_on_positive_axis():
    # independent asymptotic oracle with four Poincare terms
    u = (1.0, 5.0 / 72.0, 385.0 / 10368.0, 85085.0 / 2239488.0)

    def asym(x):
        zeta = (2.0 / 3.0) * x**1.5
        series = sum((-1) ** k * u[k] / zeta**k for k in range(4))
        return np.exp(-zeta) / (2 * np.sqrt(np.pi) * x**0.25) * series

    measured = airy_ai(20.0) / airy_ai(10.0)
    predicted = asym(20.0) / asym(10.0)
    assert abs(measured / predicted - 1.0) <= 1e-6


def test_defining_ode_via_series_derivatives():
    # Ai'' - z Ai = 0 with the second derivative taken term-wise in the series
    rng = np.random.default_rng(9)
    for _ in range(50):
        z = complex(rng.uniform(-2.2, 2.2), rng.uniform(-2.2, 2.2))
        d2 = _maclaurin_ai(z, second_derivative=True)
        assert abs(d2 - z * _maclaurin_ai(z)) <= 1e-8
        assert abs(d2 - z * airy_ai(z)) <= 1e-8


def test_range_guard():
    with pytest.raises(AiryRangeError):
        airy_ai(51.0)
    with pytest.raises(AiryRangeError):
        a0(60.0 + 0.0j)


def test_a0_far_field():
    assert abs(a0(40.0)) < 1e-12


def test_a0_at_zero_equals_one_third():
    # the ray integral of Ai from 0 equals 1/3 in any direction of decay
    assert abs(a0(0.0) - 1.0 / 3.0) <= 1e-10


def test_a0_dual_quadrature():
    # trapezoid + Richardson as an independent second quadrature
    from scipy.special import airy as _sp

    rot = np.exp(1j * np.pi / 6)

    def trap(z, h):
        s = np.arange(0.0, 30.0, h)
        vals = _sp(rot * (z + s))[0]
        w = np.ones(len(s))
        w[0] = 0.5
        return rot * h * np.sum(w * vals)

    for z in (0.0, 1.0 + 0.5j, -2.0 + 0.3j):
        t1 = trap(z, 0.01)
        t2 = trap(z, 0.005)
        richardson = (4 * t2 - t1) / 3.0
        assert abs(a0(z) - richardson) <= 1e-10


def test_a0_derivative_along_ray():
    # d/dz a0(z) = -e^{i pi/6} Ai(e^{i pi/6} z) by the fundamental theorem
    rng = np.random.default_rng(3)
    rot = np.exp(1j * np.pi / 6)
    h = 1e-5
    for _ in range(20):
        z = complex(rng.uniform(-3, 3), rng.uniform(-1, 1))
        fd = (a0(z + h) - a0(z - h)) / (2 * h)
        assert abs(fd + rot * airy_ai(rot * z)) <= 1e-8


def test_derivative_function_consistent():
    h = 1e-5
    z = 1.3 - 0.4j
    fd = (airy_ai(z + h) - airy_ai(z - h)) / (2 * h)
    assert abs(fd - airy_ai_deriv(z)) <= 1e-7
