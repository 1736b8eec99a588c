import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fermiweyl.errors import IndexOutOfRange, KTooLarge
from fermiweyl.geometry import DomainSpec, build_grid
from fermiweyl.spectral import (analytic_basis_box, assemble_laplacian, evaluate, evaluate_many,
                                gram_matrix, interpolation_matrix, max_admissible_K, solve_lowest)

PI2 = math.pi**2


@pytest.fixture(scope="module")
def square_grid_basis():
    grid = build_grid(DomainSpec.unit_square(), 200)
    op = assemble_laplacian(grid, "dirichlet")
    return op, solve_lowest(op, 100, tol=1e-8)


def lattice_eigenvalues(lengths, bc, K):
    j0 = 1 if bc == "dirichlet" else 0
    axes = [np.arange(j0, 80) for _ in lengths]
    J = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(lengths))
    lam = np.sum((np.pi * J / np.asarray(lengths)) ** 2, axis=1)
    return np.sort(lam)[:K]


def test_analytic_examples():
    b = analytic_basis_box((1, 1), "dirichlet", 3)
    assert np.allclose(b.eigenvalues, [2 * PI2, 5 * PI2, 5 * PI2], rtol=1e-14)
    n = analytic_basis_box((1, 1), "neumann", 1)
    assert n.eigenvalues[0] == 0
    assert np.allclose(evaluate(n, 1, np.random.default_rng(0).uniform(0, 1, (5, 2))), 1.0)
    c = analytic_basis_box((1, 1, 1), "dirichlet", 1)
    assert c.eigenvalues[0] == pytest.approx(3 * PI2)


@pytest.mark.parametrize("lengths", [(1.0, 1.0), (1.0, 2.0), (1.0, 1.0, 1.0)])
@pytest.mark.parametrize("bc", ["dirichlet", "neumann"])
def test_analytic_against_lattice_oracle(lengths, bc):
    b = analytic_basis_box(lengths, bc, 500)
    assert np.allclose(b.eigenvalues, lattice_eigenvalues(lengths, bc, 500), rtol=1e-13)
    assert np.all(np.diff(b.eigenvalues) >= 0)


def test_evaluate_examples(square_basis):
    assert evaluate(square_basis, 1, [[0.5, 0.5]])[0] == pytest.approx(2.0)
    assert evaluate(square_basis, 7, [[1.5, 0.5]])[0] == 0.0
    with pytest.raises(IndexOutOfRange):
        evaluate(square_basis, 0, [[0.5, 0.5]])


def test_one_node_stencil():
    grid = build_grid(DomainSpec.unit_square(), 2)
    op = assemble_laplacian(grid, "dirichlet")
    assert np.allclose(op.matrix.toarray(), [[16.0]])
    b = solve_lowest(op, 1)
    assert b.eigenvalues[0] == 16.0


@pytest.mark.parametrize("bc", ["dirichlet", "neumann"])
def test_operator_symmetric(bc):
    grid = build_grid(DomainSpec.l_shape((1, 1), (0.4, 0.5)), 30)
    M = assemble_laplacian(grid, bc).matrix
    assert abs(M - M.T).max() == 0


def test_neumann_semidefinite():
    grid = build_grid(DomainSpec.disk(0.5, (0.5, 0.5)), 40)
    b = solve_lowest(assemble_laplacian(grid, "neumann"), 10)
    assert b.eigenvalues[0] >= -1e-10 * b.eigenvalues[1]
    assert b.eigenvalues[0] == 0.0


def test_square_grid_lowest(square_grid_basis):
    op, b = square_grid_basis
    exact = lattice_eigenvalues((1, 1), "dirichlet", 100)
    assert np.max(np.abs(b.eigenvalues / exact - 1)) <= 0.01
    grid100 = build_grid(DomainSpec.unit_square(), 100)
    b100 = solve_lowest(assemble_laplacian(grid100, "dirichlet"), 1)
    assert b100.eigenvalues[0] == pytest.approx(2 * PI2, rel=1e-3)


def test_rayleigh_consistency(square_grid_basis):
    op, b = square_grid_basis
    cell = op.grid.cell_measure
    for k in range(b.K):
        u = b.vectors[:, k]
        rq = u @ (op.matrix @ u) * cell
        assert abs(rq - b.eigenvalues[k]) <= 10 * 1e-8 * b.eigenvalues[k]
    assert b.ortho_defect < 1e-10


def test_grid_vs_analytic_low_modes():
    # 2% holds for k <= 0.02 * nodes at resolution 200 (see the decisions ledger)
    grid = build_grid(DomainSpec.unit_square(), 200)
    K = 400
    b = solve_lowest(assemble_laplacian(grid, "dirichlet"), K)
    exact = lattice_eigenvalues((1, 1), "dirichlet", K)
    assert np.max(np.abs(b.eigenvalues / exact - 1)) <= 0.02


def test_disk_fundamental():
    grid = build_grid(DomainSpec.disk(1.0), 200)
    b = solve_lowest(assemble_laplacian(grid, "dirichlet"), 1)
    assert b.eigenvalues[0] == pytest.approx(2.404825557695773**2, rel=0.01)


def test_k_guard():
    grid = build_grid(DomainSpec.unit_square(), 20)
    with pytest.raises(KTooLarge):
        solve_lowest(assemble_laplacian(grid, "dirichlet"), max_admissible_K(grid.num_nodes) + 1)


def test_grid_node_values_reproduced(square_grid_basis):
    _, b = square_grid_basis
    pts = b.grid.coordinates[::997]
    vals = evaluate_many(b, [1, 2, 3], pts)
    assert np.allclose(vals, b.vectors[::997, :3].T, atol=1e-12)
    assert np.all(evaluate(b, 2, [[-0.1, 0.5], [0.5, 1.2]]) == 0)


def test_interpolation_partition_of_unity():
    grid = build_grid(DomainSpec.unit_square(), 10)
    pts = np.random.default_rng(1).uniform(0.1, 0.9, (50, 2))
    S = interpolation_matrix(grid, pts)
    assert np.allclose(np.asarray(S.sum(axis=1)).ravel(), 1.0)


@pytest.mark.parametrize("bc", ["dirichlet", "neumann"])
def test_gram_exact(bc):
    b = analytic_basis_box((1.0, 1.5, 1.0), bc, 300)
    assert np.max(np.abs(gram_matrix(b, 300) - np.eye(300))) < 1e-12


@given(st.integers(1, 400), st.floats(0.5, 3.0))
def test_scaled_box_eigenvalues(k, s):
    a = analytic_basis_box((1.0, 1.0), "dirichlet", 400)
    b = analytic_basis_box((s, s), "dirichlet", 400)
    assert b.eigenvalues[k - 1] == pytest.approx(a.eigenvalues[k - 1] / s**2, rel=1e-12)


def test_truncated_and_hash(square_basis):
    t = square_basis.truncated(10)
    assert t.K == 10 and np.array_equal(t.modes, square_basis.modes[:10])
    assert t.content_hash() != square_basis.content_hash()
