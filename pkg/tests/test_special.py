import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from fermiweyl.errors import ArgumentUnsupported, OrderUnsupported
from fermiweyl.special import (ball_indicator_hat, ball_volume, bessel_j, bessel_ratio, gamma_fn,
                               schafheitlin, schafheitlin_quadrature)

ORDERS = [0.5, 1.0, 1.5, 2.0]


def mp_bessel(nu, r):
    mpmath.mp.dps = 40
    return float(mpmath.besselj(mpmath.mpf(nu), mpmath.mpf(r)))


@pytest.mark.parametrize("nu", ORDERS)
def test_bessel_against_mpmath(nu):
    r = np.concatenate([[1e-6, 1e-4, 1e-3, 0.1, 0.5], np.linspace(0.7, 200, 400)])
    got = bessel_j(nu, r)
    ref = np.array([mp_bessel(nu, x) for x in r])
    # relative accuracy, measured against the local envelope near zeros
    scale = np.maximum(np.abs(ref), 1e-3 * np.sqrt(2 / (np.pi * r)))
    assert np.max(np.abs(got - ref) / scale) <= 1e-10


def test_bessel_examples():
    assert bessel_j(1.5, math.pi) == pytest.approx(math.sqrt(2) / math.pi, rel=1e-13)
    assert abs(bessel_j(0.5, math.pi)) < 1e-15
    assert bessel_j(1, 1e-6) == pytest.approx(5e-7, rel=1e-11)
    assert bessel_j(1, 0.0) == 0.0


def test_bessel_unsupported_order():
    with pytest.raises(OrderUnsupported):
        bessel_j(0.3, 1.0)


@given(st.floats(0.1, 100.0))
def test_bessel_recurrence(r):
    # J_{nu-1} + J_{nu+1} = (2 nu / r) J_nu
    for nu in (1.0, 1.5):
        res = bessel_j(nu - 1, r) + bessel_j(nu + 1, r) - 2 * nu / r * bessel_j(nu, r)
        assert abs(res) <= 1e-10


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("r", [1e-3, 1e-5])
def test_small_argument_limit(n, r):
    val = 2 ** (n / 2) * gamma_fn(n / 2 + 1) * bessel_j(n / 2, r) / r ** (n / 2)
    assert abs(val - 1) <= 1e-6
    assert bessel_ratio(n / 2, r) == pytest.approx(val, rel=1e-12)


def test_branch_continuity():
    for nu in ORDERS:
        lo, hi = bessel_ratio(nu, 1e-4 * (1 - 1e-12)), bessel_ratio(nu, 1e-4 * (1 + 1e-12))
        assert abs(lo - hi) <= 1e-12


@pytest.mark.parametrize("z,expected", [(2, 1.0), (3, 2.0), (2.5, 3 * math.sqrt(math.pi) / 4),
                                        (0.5, math.sqrt(math.pi)), (6, 120.0)])
def test_gamma_closed_forms(z, expected):
    assert gamma_fn(z) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("z", [0.0, 0.3, 6.5, -1])
def test_gamma_unsupported(z):
    with pytest.raises(ArgumentUnsupported):
        gamma_fn(z)


def test_ball_indicator_hat_examples():
    assert ball_indicator_hat(3, 1.0, np.zeros((1, 3)))[0] == pytest.approx(4 * math.pi / 3)
    j11 = 3.8317059702075123
    assert abs(ball_indicator_hat(2, 1.0, np.array([[j11, 0.0]]))[0]) < 1e-13
    # radial quadrature of int_{B_2} exp(-i y.x) dx at |y| = 1 in 3D
    f = lambda rr: 4 * math.pi * rr * math.sin(rr) / 1.0  # noqa: E731
    ref = integrate.quad(f, 0, 2, epsabs=1e-14)[0]
    assert ball_indicator_hat(3, 2.0, np.array([[0.0, 0.0, 1.0]]))[0] == pytest.approx(ref, abs=1e-10)


@pytest.mark.parametrize("n", [2, 3])
def test_plancherel(n):
    # panel Gauss rule up to R plus the mean-square Bessel tail area gamma^(n-1) / (pi R)
    gam, R = 1.7, 2000.0
    area = 2 * math.pi if n == 2 else 4 * math.pi
    g, w = np.polynomial.legendre.leggauss(16)
    edges = np.arange(0.0, R + 0.25, 0.25)
    mid, half = (edges[1:] + edges[:-1]) / 2, np.diff(edges) / 2
    r = (mid[:, None] + half[:, None] * g).ravel()
    wr = (half[:, None] * w).ravel()
    y = np.zeros((r.size, n))
    y[:, 0] = r
    inner = np.sum(wr * area * r ** (n - 1) * ball_indicator_hat(n, gam, y) ** 2)
    tail = area * (2 * math.pi) ** n * gam ** (n - 1) / (math.pi * R)
    total = (inner + tail) / (2 * math.pi) ** n
    assert total == pytest.approx(ball_volume(n, gam), rel=1e-4)


def test_ball_volume():
    assert ball_volume(2) == pytest.approx(math.pi)
    assert ball_volume(3, 2.0) == pytest.approx(32 * math.pi / 3)


@pytest.mark.parametrize("n,expected", [(2, 4 / (3 * math.pi)), (3, 1 / (2 * math.pi))])
def test_schafheitlin(n, expected):
    assert schafheitlin(n) == pytest.approx(expected, rel=1e-15)
    value, tail = schafheitlin_quadrature(n)
    assert abs(value - expected) <= 1e-6
    assert tail >= 0
