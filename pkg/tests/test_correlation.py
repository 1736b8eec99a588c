import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from fermiweyl.correlation import (YLattice, default_x_samples, default_y_lattice, error_norms,
                                   l2_norm_squared, l2_norm_squared_lattice, limit_P, limit_Q,
                                   limit_Q_indicator_form, limit_Q_tail, one_body_density,
                                   one_body_matrix, one_body_matrix_shifted, pair_correlation,
                                   shifted_l2_identity)
from fermiweyl.errors import KindMismatch, LatticeMismatch, NTooLarge
from fermiweyl.geometry import DomainSpec, compact_subset
from fermiweyl.spectral import analytic_basis_box


@pytest.fixture(scope="module")
def basis():
    return analytic_basis_box((1.0, 1.0), "dirichlet", 2048)


@pytest.fixture(scope="module")
def xs(basis):
    return default_x_samples(basis.domain, 0.15, 7)


def test_q_at_zero_is_density(basis, xs):
    Q = one_body_matrix(basis, 300, xs, np.zeros((1, 2)))
    rho = one_body_density(basis, 300, xs)
    assert np.allclose(Q.values[:, 0], rho.values, rtol=1e-14, atol=0)
    Qs = one_body_matrix_shifted(basis, 300, xs, np.zeros((1, 2)))
    assert np.allclose(Qs.values[:, 0], rho.values, rtol=1e-14, atol=0)


def test_q_even_in_y(basis, xs):
    ylat = YLattice(2, 3.0, 0.25)
    Q = one_body_matrix(basis, 500, xs, ylat)
    assert np.allclose(Q.values, Q.values[:, ::-1], atol=1e-12)  # points list is symmetric
    assert np.isrealobj(Q.values)


def test_pair_correlation_identity(basis, xs):
    Q = one_body_matrix(basis, 200, xs, YLattice(2, 2.0, 0.2))
    P = pair_correlation(Q)
    assert P.kind == "P" and np.all(P.values <= 0)
    assert np.allclose(P.values, -0.5 * Q.values**2, rtol=1e-14, atol=0)
    rho = one_body_density(basis, 200, xs).values
    zero = np.argmin(Q.y_lattice.radii)
    assert np.allclose(P.values[:, zero], -0.5 * rho**2, rtol=1e-14)
    with pytest.raises(KindMismatch):
        pair_correlation(P)


def test_single_mode_density(basis):
    assert one_body_density(basis, 1, [[0.5, 0.5]]).values[0] == pytest.approx(4.0, rel=1e-14)


@given(st.integers(1, 2048))
def test_density_nonnegative(N):
    b = analytic_basis_box((1.0, 1.0), "dirichlet", 2048)
    pts = np.random.default_rng(N).uniform(-0.1, 1.1, (50, 2))
    assert np.all(one_body_density(b, N, pts).values >= 0)


def test_n_too_large(basis, xs):
    with pytest.raises(NTooLarge):
        one_body_density(basis, 4096, xs)


@pytest.mark.parametrize("N", [256, 1024, 2048])
def test_l2_identity(basis, N):
    assert l2_norm_squared(basis, N) == pytest.approx(1.0, abs=1e-6)


def test_l2_identity_brute_force():
    b = analytic_basis_box((1.0, 1.0), "dirichlet", 40)
    assert l2_norm_squared_lattice(b, 40, 24) == pytest.approx(1.0, abs=1e-6)
    n = analytic_basis_box((1.0, 2.0), "neumann", 40)
    assert l2_norm_squared(n, 40) == pytest.approx(1.0, abs=1e-6)


def test_one_body_sup_error(basis):
    x = np.array([[0.43, 0.57]])
    ylat = YLattice(2, 8.0, 0.1)
    Q = one_body_matrix(basis, 2048, x, ylat)
    assert error_norms(Q, limit_Q(basis.domain, ylat)).sup_on_compact <= 0.05
    P = pair_correlation(Q)
    assert error_norms(P, limit_P(basis.domain, ylat)).sup_on_compact <= 0.05


def test_l2_global_decay(basis, xs):
    ylat = YLattice(2, 4.0, 0.2)
    lim = limit_Q(basis.domain, ylat)
    errs = [error_norms(one_body_matrix(basis, N, xs, ylat), lim).L2_global for N in (512, 1024, 2048)]
    assert all(b <= 1.1 * a for a, b in zip(errs, errs[1:]))


def test_density_mean_deviation(basis):
    sub = compact_subset(basis.domain, 0.15)
    pts, w = sub.sample_lattice(40)
    rho = one_body_density(basis, 2048, pts).values
    assert np.sum(w * np.abs(rho - 1.0)) / np.sum(w) <= 0.05


def test_shifted_identity(basis):
    x = default_x_samples(basis.domain, 0.3, 3)
    ylat = default_y_lattice(basis.domain)
    Qs = one_body_matrix_shifted(basis, 1024, x, ylat)
    integral, tail = shifted_l2_identity(Qs, basis.domain)
    rho = one_body_density(basis, 1024, x).values
    assert np.all(np.abs(integral + tail - rho) <= 0.01 * rho)
    with pytest.raises(KindMismatch):
        shifted_l2_identity(one_body_matrix(basis, 8, x, ylat))


def test_shifted_consistency(basis, xs):
    N = 700
    s = N**-0.5
    y = np.random.default_rng(2).uniform(-3, 3, (40, 2))
    Qs = one_body_matrix_shifted(basis, N, xs, y)
    for i, x in enumerate(xs[:6]):
        Q = one_body_matrix(basis, N, x[None] + 0.5 * s * y, y)
        assert np.allclose(Qs.values[i], np.diag(Q.values), atol=1e-12)


def test_limit_examples():
    sq, cube = DomainSpec.unit_square(), DomainSpec.unit_cube()
    assert limit_Q(sq, np.zeros((1, 2)))[0] == pytest.approx(1.0, rel=1e-14)
    assert limit_Q(DomainSpec.rectangle((1, 2)), np.zeros((1, 2)))[0] == pytest.approx(0.5)
    gam = (6 * math.pi**2) ** (1 / 3)
    assert limit_Q(cube, [[math.pi / gam, 0, 0]])[0] == pytest.approx(3 / math.pi**2, abs=1e-12)
    assert limit_P(cube, np.zeros((1, 3)))[0] == -0.5
    r0 = optimize.brentq(lambda r: math.sin(r) - r * math.cos(r), 4.0, 4.7)
    assert r0 == pytest.approx(4.4934, abs=1e-4)
    assert abs(limit_P(cube, [[r0 / gam, 0, 0]])[0]) <= 1e-28
    assert limit_P(cube, [[(r0 - 0.1) / gam, 0, 0]])[0] < 0


@pytest.mark.parametrize("dom", [DomainSpec.unit_square(), DomainSpec.unit_cube(),
                                 DomainSpec.disk(0.7), DomainSpec.disk(0.5, dimension=3)])
def test_limit_two_forms(dom, rng):
    y = rng.uniform(-4, 4, (100, dom.dimension))
    assert np.allclose(limit_Q(dom, y), limit_Q_indicator_form(dom, y), rtol=0, atol=1e-12)
    P = limit_P(dom, y)
    assert np.allclose(P, -0.5 * limit_Q(dom, y) ** 2, rtol=1e-14, atol=0)


def test_geometry_universality_formula():
    # disk of area 1 and unit square share gamma, hence the limit curve
    sq, disk = DomainSpec.unit_square(), DomainSpec.disk(1 / math.sqrt(math.pi))
    y = np.random.default_rng(5).uniform(-6, 6, (200, 2))
    assert np.allclose(limit_Q(sq, y), limit_Q(disk, y), rtol=0, atol=1e-12)


def test_limit_tail():
    sq = DomainSpec.unit_square()
    assert limit_Q_tail(sq, 0.0) == pytest.approx(1.0)
    t = [limit_Q_tail(sq, R) for R in (1, 4, 12)]
    assert t[0] > t[1] > t[2] > 0


def test_error_norm_examples(basis, xs):
    ylat = YLattice(2, 2.0, 0.25)
    Q = one_body_matrix(basis, 100, xs, ylat)
    zero = error_norms(Q, Q.values)
    assert zero.sup_on_compact == zero.L1_global == zero.L2_global == 0
    lim = limit_Q(basis.domain, ylat)
    inner = error_norms(Q, lim, compact_subset(basis.domain, 0.3)).sup_on_compact
    outer = error_norms(Q, lim, compact_subset(basis.domain, 0.15)).sup_on_compact
    assert inner <= outer
    with pytest.raises(LatticeMismatch):
        error_norms(Q, np.zeros(7))
