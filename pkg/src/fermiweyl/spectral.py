"""Dirichlet and Neumann eigenbases of the Laplacian.

Boxes get the separable sine/cosine modes in closed form; every other domain
is discretised with the 5-point (7-point in 3D) stencil on a :class:`Grid`
and solved by shift-invert Lanczos.
"""

import hashlib
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import IndexOutOfRange, KTooLarge, NoConvergence
from .geometry import DomainSpec, Grid

BCS = ("dirichlet", "neumann")
GUARD_FRACTION = 0.05
DENSE_LIMIT = 2500


def _check_bc(bc):
    bc = str(bc).lower()
    if bc not in BCS:
        raise ValueError(f"boundary condition must be one of {BCS}, got {bc!r}")
    return bc


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """Ordered orthonormal eigenpairs of ``-Laplace`` on a domain.

    Attributes
    ----------
    bc : {"dirichlet", "neumann"}
    eigenvalues : ndarray, shape (K,)
        Ascending.
    representation : {"analytic", "grid"}
    domain : DomainSpec
    ortho_defect : float
        ``max |<u_j, u_k> - delta_jk|`` in the basis' inner product.
    modes : ndarray of int, shape (K, n), analytic only
        Mode multi-index per eigenpair.
    vectors : ndarray, shape (nodes, K), grid only
        Nodal values, normalised in the cell-measure weighted l2 product.
    grid : Grid, grid only
    """

    bc: str
    eigenvalues: np.ndarray
    representation: str
    domain: DomainSpec
    ortho_defect: float
    modes: np.ndarray = None
    vectors: np.ndarray = None
    grid: Grid = None

    @property
    def K(self):
        return len(self.eigenvalues)

    @property
    def dimension(self):
        return self.domain.dimension

    @property
    def lengths(self):
        return np.array(self.domain.params["lengths"]) if self.representation == "analytic" else None

    def truncated(self, K):
        """The first ``K`` eigenpairs as a new basis."""
        if not 1 <= K <= self.K:
            raise IndexOutOfRange(f"cannot truncate a {self.K}-pair basis to {K}")
        return EigenBasis(self.bc, self.eigenvalues[:K], self.representation, self.domain,
                          self.ortho_defect,
                          None if self.modes is None else self.modes[:K],
                          None if self.vectors is None else self.vectors[:, :K],
                          self.grid)

    def mode_table(self, axis, x, jmax=None):
        """1D factors ``phi_j(x)`` for ``j = 0..jmax`` along one box axis.

        Returns shape ``(jmax + 1,) + x.shape``; zero outside ``(0, L)``.
        For Dirichlet the ``j = 0`` row is identically zero.
        """
        if self.representation != "analytic":
            raise TypeError("mode tables exist only for analytic box bases")
        L = self.lengths[axis]
        if jmax is None:
            jmax = int(self.modes[:, axis].max())
        x = np.asarray(x, dtype=float)
        j = np.arange(jmax + 1).reshape((-1,) + (1,) * x.ndim)
        arg = np.pi * j * x / L
        if self.bc == "dirichlet":
            tab = math.sqrt(2.0 / L) * np.sin(arg)
        else:
            tab = math.sqrt(2.0 / L) * np.cos(arg)
            tab[0] = math.sqrt(1.0 / L)
        return np.where((x > 0) & (x < L), tab, 0.0)

    def content_hash(self):
        h = hashlib.sha256()
        h.update(self.domain.content_hash().encode())
        h.update(self.bc.encode())
        h.update(np.ascontiguousarray(self.eigenvalues).tobytes())
        if self.modes is not None:
            h.update(np.ascontiguousarray(self.modes).tobytes())
        if self.vectors is not None:
            h.update(np.ascontiguousarray(self.vectors).tobytes())
        return h.hexdigest()


def _box_modes(lengths, bc, K):
    lengths = np.asarray(lengths, dtype=float)
    n = len(lengths)
    j0 = 1 if bc == "dirichlet" else 0
    vol = float(np.prod(lengths))
    # Weyl estimate for the radius of the k-space ball holding K modes, then grow
    radius = (K * 2**n / (vol * math.pi ** (n / 2) / math.gamma(n / 2 + 1))) ** (1 / n) / math.pi
    radius = max(radius, 1.0 / lengths.min()) * 1.2 + 2.0 / lengths.min()
    while True:
        jmax = np.ceil(radius * lengths).astype(int)
        axes = [np.arange(j0, jm + 1) for jm in jmax]
        modes = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n)
        key = np.sum((modes / lengths) ** 2, axis=1)
        inside = key <= radius**2
        if inside.sum() >= K:
            break
        radius *= 1.5
    modes, key = modes[inside], key[inside]
    # exact ties must compare equal despite rounding in key
    qkey = np.round(key / key.max(), 12) if key.max() > 0 else key
    order = np.lexsort(tuple(modes[:, i] for i in reversed(range(n))) + (qkey,))
    modes = modes[order[:K]]
    return modes, math.pi**2 * np.sum((modes / lengths) ** 2, axis=1)


def analytic_basis_box(lengths, bc, K):
    """Separable eigenbasis of the box ``prod_i (0, L_i)``.

    Dirichlet modes are ``prod sqrt(2/L_i) sin(pi j_i x_i / L_i)`` with
    ``j_i >= 1``; Neumann modes use cosines with ``j_i >= 0`` (normalised by
    ``sqrt(1/L_i)`` when ``j_i = 0``).  Degenerate eigenvalues are ordered
    lexicographically by mode index.

    Examples
    --------
    >>> b = analytic_basis_box((1.0, 1.0), "dirichlet", 3)
    >>> np.round(b.eigenvalues / np.pi**2, 12)
    array([2., 5., 5.])
    """
    bc = _check_bc(bc)
    if K < 1:
        raise ValueError("K must be at least 1")
    domain = lengths if isinstance(lengths, DomainSpec) else DomainSpec.rectangle(lengths)
    modes, lam = _box_modes(domain.params["lengths"], bc, int(K))
    return EigenBasis(bc, lam, "analytic", domain, 0.0, modes=modes)


@dataclass(frozen=True, eq=False)
class SpectralOperator:
    """Finite-difference ``-Laplace_h`` on the interior nodes of a grid."""

    matrix: sparse.csr_matrix
    grid: Grid
    bc: str
    stencil: str = "second-order central"


def assemble_laplacian(grid, bc):
    """Assemble the 5/7-point stencil on interior nodes.

    Dirichlet drops exterior neighbours (zero ghost values).  Neumann mirrors
    the node across the missing link, which removes the link from both the
    diagonal and off-diagonal, so the matrix stays exactly symmetric and
    annihilates constants.
    """
    bc = _check_bc(bc)
    n_nodes = grid.num_nodes
    if n_nodes == 0:
        raise ValueError("grid has no interior nodes")
    nodes = np.asarray(grid.nodes)
    rows, cols, vals = [], [], []
    diag = np.zeros(n_nodes)
    shape = np.array(grid.shape)
    for axis in range(len(shape)):
        w = 1.0 / grid.spacing[axis] ** 2
        for step in (-1, 1):
            nb = nodes.copy()
            nb[:, axis] += step
            ok = (nb[:, axis] >= 0) & (nb[:, axis] < shape[axis])
            idx = np.full(n_nodes, -1)
            idx[ok] = grid.index[tuple(nb[ok].T)]
            linked = idx >= 0
            rows.append(np.nonzero(linked)[0])
            cols.append(idx[linked])
            vals.append(np.full(int(linked.sum()), -w))
            diag += w if bc == "dirichlet" else w * linked
    rows.append(np.arange(n_nodes))
    cols.append(np.arange(n_nodes))
    vals.append(diag)
    mat = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(n_nodes, n_nodes))
    mat.sort_indices()
    return SpectralOperator(mat, grid, bc)


def max_admissible_K(num_nodes):
    return max(1, int(math.floor(GUARD_FRACTION * num_nodes)))


def solve_lowest(op, K, tol=1e-8, seed=0):
    """Lowest ``K`` eigenpairs of a :class:`SpectralOperator`.

    Small problems go to a dense symmetric solver; larger ones to ARPACK in
    shift-invert mode around 0 (Dirichlet) or a small negative shift
    (Neumann, whose operator is singular), started from a seeded vector.

    Raises
    ------
    KTooLarge
        If ``K`` exceeds the high-frequency guard ``0.05 * nodes``.
    NoConvergence
        If a pair misses the residual contract ``||(A - lam) u|| <= tol * lam``.
    """
    grid = op.grid
    n_nodes = grid.num_nodes
    if K < 1 or K > max_admissible_K(n_nodes):
        raise KTooLarge(f"K={K} exceeds 0.05 x {n_nodes} interior nodes")
    A = op.matrix
    if n_nodes <= DENSE_LIMIT:
        lam, vec = np.linalg.eigh(A.toarray())
        lam, vec = lam[:K], vec[:, :K]
    else:
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(n_nodes)
        sigma = 0.0 if op.bc == "dirichlet" else -1.0
        try:
            lam, vec = splinalg.eigsh(A.tocsc(), k=K, sigma=sigma, which="LM", v0=v0,
                                      tol=min(tol, 1e-10) * 1e-2, maxiter=20 * n_nodes)
        except splinalg.ArpackNoConvergence as exc:
            done = len(exc.eigenvalues)
            raise NoConvergence(done + 1, f"ARPACK converged {done} of {K} pairs") from exc
    order = np.argsort(lam, kind="stable")
    lam, vec = lam[order], vec[:, order]
    if op.bc == "neumann":
        # the constant mode is exact; snap round-off
        lam = np.where(np.abs(lam) < 1e-10 * max(1.0, abs(lam[-1])), 0.0, lam)
    cell = grid.cell_measure
    vec = vec / math.sqrt(cell)
    # sign convention: first nonnegligible entry positive
    pivot = np.argmax(np.abs(vec) > 1e-8 * np.abs(vec).max(axis=0), axis=0)
    vec *= np.sign(vec[pivot, np.arange(K)])
    scale = lam[1] if (op.bc == "neumann" and K > 1) else 1.0
    for k in range(K):
        res = np.linalg.norm(A @ vec[:, k] - lam[k] * vec[:, k]) * math.sqrt(cell)
        if res > tol * max(abs(lam[k]), scale):
            raise NoConvergence(k + 1, f"residual {res:.3e} of pair {k + 1} above "
                                       f"{tol:.1e} x lambda")
    gram = (vec.T @ vec) * cell
    defect = float(np.max(np.abs(gram - np.eye(K))))
    vec.setflags(write=False)
    return EigenBasis(op.bc, lam, "grid", grid.domain, defect, vectors=vec, grid=grid)


def interpolation_matrix(grid, points):
    """Sparse multilinear interpolation from interior nodes to ``points``.

    Non-interior lattice nodes carry value zero, and points outside the
    domain get an all-zero row (zero extension).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[1]
    rel = (pts - grid.origin) / grid.spacing
    base = np.floor(rel).astype(np.int64)
    frac = rel - base
    inside = grid.domain.contains(pts)
    shape = np.array(grid.shape)
    rows, cols, vals = [], [], []
    prow = np.arange(len(pts))
    for corner in itertools.product((0, 1), repeat=n):
        c = base + np.array(corner)
        w = np.prod(np.where(np.array(corner), frac, 1.0 - frac), axis=1)
        ok = inside & np.all((c >= 0) & (c < shape), axis=1)
        idx = np.full(len(pts), -1)
        idx[ok] = grid.index[tuple(c[ok].T)]
        keep = (idx >= 0) & (w != 0.0)
        rows.append(prow[keep])
        cols.append(idx[keep])
        vals.append(w[keep])
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(len(pts), grid.num_nodes))


def _check_index(basis, k):
    k = np.atleast_1d(np.asarray(k))
    if k.size and (k.min() < 1 or k.max() > basis.K):
        raise IndexOutOfRange(f"eigen index out of 1..{basis.K}")
    return k.astype(int)


def evaluate_many(basis, ks, points):
    """Values ``u_k(p)`` for 1-based indices ``ks``; shape ``(len(ks), len(points))``."""
    ks = _check_index(basis, ks)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if ks.size == 0:
        return np.zeros((0, len(pts)))
    if basis.representation == "analytic":
        modes = basis.modes[ks - 1]
        out = np.ones((len(ks), len(pts)))
        for axis in range(pts.shape[1]):
            tab = basis.mode_table(axis, pts[:, axis], int(modes[:, axis].max()))
            out *= tab[modes[:, axis]]
        return out
    interp = interpolation_matrix(basis.grid, pts)
    return np.asarray((interp @ basis.vectors[:, ks - 1]).T)


def evaluate(basis, k, points):
    """Values of the ``k``-th (1-based) eigenfunction at ``points``.

    Analytic bases use the closed form; grid bases interpolate multilinearly
    and vanish outside the domain.

    Examples
    --------
    >>> b = analytic_basis_box((1.0, 1.0), "dirichlet", 1)
    >>> float(evaluate(b, 1, [[0.5, 0.5]])[0])
    2.0
    """
    if not np.isscalar(k) and np.ndim(k) != 0:
        raise TypeError("evaluate takes a single index; use evaluate_many")
    return evaluate_many(basis, [int(k)], points)[0]


def gram_matrix(basis, N, resolution=None):
    """Gram matrix of ``u_1..u_N`` under lattice quadrature.

    Analytic bases use a midpoint lattice with ``resolution`` cells per axis
    (default: just above the highest mode number, where the discrete
    orthogonality of sines and cosines is exact); grid bases use the nodal
    cell-measure weighted product.
    """
    if basis.representation == "grid":
        V = basis.vectors[:, :N]
        return (V.T @ V) * basis.grid.cell_measure
    modes = basis.modes[:N]
    G = np.ones((N, N))
    for axis in range(basis.dimension):
        jmax = int(modes[:, axis].max())
        M = resolution or jmax + 2
        L = basis.lengths[axis]
        x = (np.arange(M) + 0.5) * L / M
        tab = basis.mode_table(axis, x, jmax)
        G1 = (tab @ tab.T) * (L / M)
        G *= G1[np.ix_(modes[:, axis], modes[:, axis])]
    return G
