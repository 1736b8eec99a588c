"""Spinless one-body matrix, density and pair correlation of the free Fermi gas.

All fields are sampled on a list of x points and, where relevant, on a
tensor y lattice (:class:`YLattice`).  For a basis ``u_1, u_2, ...`` and
``s = N^(-1/n)``:

* ``Q_N(x, y) = N^-1 sum_{k<=N} u_k(x + s y / 2) conj(u_k(x - s y / 2))``,
* ``Q~_N(x, y) = N^-1 sum_{k<=N} u_k(x + s y) conj(u_k(x))``,
* ``rho_N(x) = Q_N(x, 0)`` and ``P_N = -|Q_N|^2 / 2``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import KindMismatch, LatticeMismatch, NTooLarge
from .spectral import evaluate_many, gram_matrix, interpolation_matrix
from .special import ball_indicator_hat, ball_volume, bessel_ratio
from .weyl import gamma as weyl_gamma

KINDS = ("Q", "Q_shifted", "P", "rho")
X_CHUNK_POINTS = 400_000


@dataclass(frozen=True, eq=False)
class YLattice:
    """Tensor lattice ``spacing * {-M..M}^n`` with ``M = ceil(extent / spacing)``.

    Values live on the whole cube; ``ball_mask`` marks ``|y| <= extent``.
    """

    dimension: int
    extent: float
    spacing: float
    ball: bool = True

    @property
    def M(self):
        return int(math.ceil(self.extent / self.spacing - 1e-9))

    @property
    def axis(self):
        return self.spacing * np.arange(-self.M, self.M + 1)

    @property
    def shape(self):
        return (2 * self.M + 1,) * self.dimension

    @property
    def points(self):
        ax = self.axis
        return np.stack(np.meshgrid(*([ax] * self.dimension), indexing="ij"), -1).reshape(
            -1, self.dimension)

    @property
    def radii(self):
        return np.linalg.norm(self.points, axis=1)

    @property
    def ball_mask(self):
        if not self.ball:
            return np.ones(int(np.prod(self.shape)), dtype=bool)
        return self.radii <= self.extent * (1 + 1e-12)

    @property
    def cell(self):
        return self.spacing**self.dimension

    def __eq__(self, other):
        return (isinstance(other, YLattice) and self.dimension == other.dimension
                and self.M == other.M and math.isclose(self.spacing, other.spacing))

    __hash__ = None


def default_y_lattice(domain, extent=None, spacing=0.1):
    """``|y| <= 12 / gamma * max(1, gamma)``, spacing 0.1."""
    gam = weyl_gamma(domain)
    R = extent if extent is not None else 12.0 / gam * max(1.0, gam)
    return YLattice(domain.dimension, R, spacing)


def default_x_samples(domain, margin=None, per_axis=15):
    """Tensor lattice of ``per_axis`` points per axis inside the margin-eroded domain."""
    from .geometry import compact_subset
    margin = 0.1 * domain.diameter if margin is None else margin
    sub = compact_subset(domain, margin)
    lo, hi = domain.bbox
    axes = [np.linspace(a + margin, b - margin, per_axis) for a, b in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, domain.dimension)
    return pts[sub.contains(pts)]


@dataclass(frozen=True, eq=False)
class CorrelationField:
    """Sampled correlation quantity.

    ``values`` has shape ``(len(x_samples), n_y)`` for Q, Q_shifted and P
    (y flattened over the cube of ``y_lattice`` or the given point list) and
    ``(len(x_samples),)`` for rho.
    """

    kind: str
    N: int
    x_samples: np.ndarray
    values: np.ndarray
    y_lattice: YLattice = None
    y_points: np.ndarray = None
    m: int = 1
    x_weights: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS + ("Q_spin", "P_spin", "rho_spin"):
            raise ValueError(f"unknown field kind {self.kind!r}")

    @property
    def y(self):
        if self.y_lattice is not None:
            return self.y_lattice.points
        return self.y_points


# evaluation core ------------------------------------------------------------

def _check_N(basis, N):
    if N < 1 or N > basis.K:
        raise NTooLarge(f"N={N} exceeds the {basis.K} computed eigenpairs")


def _weight_tensor(basis, ks, weights):
    modes = basis.modes[np.asarray(ks) - 1]
    jmax = basis.modes.max(axis=0) if len(modes) == 0 else modes.max(axis=0)
    W = np.zeros(tuple(int(j) + 1 for j in jmax))
    np.add.at(W, tuple(modes.T), weights)
    return W


def _tensor_pair_sum(W, tables):
    # W has one axis per dimension; tables[i] has shape (J_i, ny_i)
    n = len(tables)
    out = W
    for i in reversed(range(n)):
        out = np.tensordot(out, tables[i], axes=([i], [0]))
        # tensordot removes axis i and appends the y axis at the end; move it back
        out = np.moveaxis(out, -1, i)
    return out


def _points_pair_sum(W, tables):
    # tables[i] shape (J_i, P)
    n = len(tables)
    if n == 1:
        return W @ tables[0]
    if n == 2:
        return np.sum(tables[0] * (W @ tables[1]), axis=0)
    A, B, C = W.shape
    G = (W.reshape(A * B, C) @ tables[2]).reshape(A, B, -1)
    H = np.einsum("abp,bp->ap", G, tables[1])
    return np.sum(tables[0] * H, axis=0)


def pair_sum(basis, ks, weights, x, y, plus=0.5, minus=0.5):
    """``sum_k w_k u_k(x + plus*y) conj(u_k(x - minus*y))`` for one point ``x``.

    ``y`` is a :class:`YLattice` (result over its cube, flattened) or an
    array of points ``(P, n)``; ``plus`` and ``minus`` already include the
    scale ``s``.  Bases are real, so no conjugation is applied.
    """
    ks = np.asarray(ks)
    weights = np.broadcast_to(np.asarray(weights, dtype=float), ks.shape)
    x = np.asarray(x, dtype=float)
    n = basis.dimension
    if basis.representation == "analytic":
        W = _weight_tensor(basis, ks, weights)
        if isinstance(y, YLattice):
            ax = y.axis
            tables = [basis.mode_table(i, x[i] + plus * ax, W.shape[i] - 1)
                      * basis.mode_table(i, x[i] - minus * ax, W.shape[i] - 1) for i in range(n)]
            return _tensor_pair_sum(W, tables).ravel()
        y = np.atleast_2d(y)
        out = np.empty(len(y))
        chunk = max(1, X_CHUNK_POINTS // max(1, W.size // W.shape[-1]))
        for s in range(0, len(y), chunk):
            yy = y[s:s + chunk]
            tables = [basis.mode_table(i, x[i] + plus * yy[:, i], W.shape[i] - 1)
                      * basis.mode_table(i, x[i] - minus * yy[:, i], W.shape[i] - 1)
                      for i in range(n)]
            out[s:s + chunk] = _points_pair_sum(W, tables)
        return out
    pts = y.points if isinstance(y, YLattice) else np.atleast_2d(y)
    V = basis.vectors[:, ks - 1]
    Sp = interpolation_matrix(basis.grid, x + plus * pts)
    Sm = interpolation_matrix(basis.grid, x - minus * pts)
    return np.asarray(np.sum((Sp @ V) * (Sm @ V) * weights, axis=1)).ravel()


def pair_sum_bilinear(basis, ks, C, x, y, plus=0.5, minus=0.5):
    """``sum_{k,l} C[k,l] u_k(x + plus*y) u_l(x - minus*y)`` for a small index set."""
    ks = np.asarray(ks)
    pts = y.points if isinstance(y, YLattice) else np.atleast_2d(y)
    Up = evaluate_many(basis, ks, x + plus * pts)
    Um = evaluate_many(basis, ks, x - minus * pts)
    return np.einsum("kp,kl,lp->p", Up, C, Um)


def _field(kind, basis, N, x_samples, y, values, **meta):
    ylat = y if isinstance(y, YLattice) else None
    ypts = None if isinstance(y, YLattice) or y is None else np.atleast_2d(y)
    md = {"basis": basis.representation, "bc": basis.bc, "domain_hash": basis.domain.content_hash()}
    if basis.representation == "grid":
        # multilinear interpolation error O(spacing^2 * lambda_N)
        md["interpolation_error_budget"] = float(
            np.max(basis.grid.spacing) ** 2 * basis.eigenvalues[N - 1] / 8.0)
    md.update(meta)
    return CorrelationField(kind, N, np.atleast_2d(np.asarray(x_samples, float)), values,
                            ylat, ypts, metadata=md)


def _spinless(basis, N, x_samples, y, plus, minus):
    _check_N(basis, N)
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    ks = np.arange(1, N + 1)
    w = np.full(N, 1.0 / N)
    return np.array([pair_sum(basis, ks, w, x, y, plus, minus) for x in x_samples])


def one_body_matrix(basis, N, x_samples, y_samples):
    """Rescaled one-body matrix ``Q_N`` on ``x_samples`` x ``y_samples``.

    Raises
    ------
    NTooLarge
    """
    s = N ** (-1.0 / basis.dimension)
    vals = _spinless(basis, N, x_samples, y_samples, 0.5 * s, 0.5 * s)
    return _field("Q", basis, N, x_samples, y_samples, vals)


def one_body_matrix_shifted(basis, N, x_samples, y_samples):
    """Shifted one-body matrix ``Q~_N(x, y) = Q_N(x + s y / 2, y)``."""
    s = N ** (-1.0 / basis.dimension)
    vals = _spinless(basis, N, x_samples, y_samples, s, 0.0)
    return _field("Q_shifted", basis, N, x_samples, y_samples, vals)


def one_body_density(basis, N, x_samples):
    """``rho_N(x) = N^-1 sum_{k<=N} |u_k(x)|^2``."""
    _check_N(basis, N)
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    vals = np.sum(evaluate_many(basis, np.arange(1, N + 1), x_samples) ** 2, axis=0) / N
    return _field("rho", basis, N, x_samples, None, vals)


def pair_correlation(Q):
    """``P_N = -|Q_N|^2 / 2`` pointwise.

    Raises
    ------
    KindMismatch
        If ``Q`` is not a one-body matrix field.
    """
    if Q.kind != "Q":
        raise KindMismatch(f"pair_correlation needs a Q field, got {Q.kind}")
    return CorrelationField("P", Q.N, Q.x_samples, -0.5 * np.abs(Q.values) ** 2, Q.y_lattice,
                            Q.y_points, Q.m, Q.x_weights, dict(Q.metadata))


# limits ---------------------------------------------------------------------

def _radii(y_samples):
    if isinstance(y_samples, YLattice):
        return y_samples.radii
    return np.linalg.norm(np.atleast_2d(y_samples), axis=1)


def limit_Q(domain, y_samples):
    """``Q(y) = Lambda_{n/2}(gamma |y|) / |Omega|`` with ``Lambda_nu(r) = Gamma(nu+1)(2/r)^nu J_nu(r)``."""
    n = domain.dimension
    return bessel_ratio(n / 2, weyl_gamma(domain) * _radii(y_samples)) / domain.volume


def limit_Q_indicator_form(domain, y_samples):
    """The same limit written as ``F chi_{B_gamma}(y) / |Omega x B_gamma|``."""
    n = domain.dimension
    gam = weyl_gamma(domain)
    y = y_samples.points if isinstance(y_samples, YLattice) else np.atleast_2d(y_samples)
    return ball_indicator_hat(n, gam, y) / (domain.volume * ball_volume(n, gam))


def limit_P(domain, y_samples):
    """``P = -Q^2 / 2``; equals ``-1 / (2 |Omega|^2)`` at ``y = 0``."""
    return -0.5 * limit_Q(domain, y_samples) ** 2


def limit_Q_tail(domain, extent):
    """``int_{|y| > R} |Q(y)|^2 dy`` for the limit, from ``int |Q|^2 = 1/|Omega|``."""
    n = domain.dimension
    gam = weyl_gamma(domain)
    area = 2 * math.pi if n == 2 else 4 * math.pi

    def f(r):
        return area * r ** (n - 1) * float(bessel_ratio(n / 2, gam * r)) ** 2
    edges = np.linspace(0.0, extent, int(extent * gam / math.pi) + 2)
    inner = sum(integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-12)[0]
                for a, b in zip(edges[:-1], edges[1:]))
    return max(1.0 / domain.volume - inner / domain.volume**2, 0.0)


# norms and identities -------------------------------------------------------

@dataclass(frozen=True)
class ErrorNorms:
    sup_on_compact: float
    L1_global: float
    L2_global: float


def error_norms(field, oracle, subset=None):
    """Deviation of a field from oracle values on matched lattices.

    ``oracle`` is broadcast against ``field.values`` (a y-only limit of shape
    ``(n_y,)`` is repeated over x).  The sup norm is restricted to x in
    ``subset`` and, for y lattices, to ``|y| <= extent``.  Global norms use
    the field's x weights (uniform if absent) and the y cell measure.

    Raises
    ------
    LatticeMismatch
        If the oracle cannot be matched to the field's sample shape.
    """
    vals = np.asarray(field.values)
    orc = np.asarray(oracle)
    try:
        orc = np.broadcast_to(orc, vals.shape)
    except ValueError as exc:
        raise LatticeMismatch(f"oracle shape {orc.shape} vs field shape {vals.shape}") from exc
    diff = np.abs(vals - orc)
    x = field.x_samples
    xmask = np.ones(len(x), dtype=bool) if subset is None else subset.contains(x)
    if diff.ndim == 2 and field.y_lattice is not None:
        ymask = field.y_lattice.ball_mask
        ycell = field.y_lattice.cell
    else:
        ymask = np.ones(diff.shape[1:], dtype=bool) if diff.ndim == 2 else None
        ycell = 1.0
    if diff.ndim == 2:
        sub = diff[xmask][:, ymask]
    else:
        sub = diff[xmask]
    sup = float(sub.max()) if sub.size else 0.0
    wx = field.x_weights if field.x_weights is not None else np.full(len(x), 1.0 / len(x))
    if diff.ndim == 2:
        l1 = float(np.sum(wx[:, None] * diff) * ycell)
        l2 = float(np.sqrt(np.sum(wx[:, None] * diff**2) * ycell))
    else:
        l1 = float(np.sum(wx * diff))
        l2 = float(np.sqrt(np.sum(wx * diff**2)))
    return ErrorNorms(sup, l1, l2)


def l2_norm_squared(basis, N, resolution=None):
    """Discrete ``||Q_N||^2`` over ``R^n x R^n``.

    Under ``w = x + s y / 2``, ``z = x - s y / 2`` (Jacobian ``N``) the lattice
    sum ``sum_{w,z} |Q_N|^2 N dw dz`` equals ``N^-1 ||G||_F^2`` with ``G``
    the lattice Gram matrix of ``u_1..u_N``, which is evaluated here.
    """
    _check_N(basis, N)
    G = gram_matrix(basis, N, resolution)
    return float(np.sum(np.abs(G) ** 2) / N)


def l2_norm_squared_lattice(basis, N, cells):
    """Brute-force version of :func:`l2_norm_squared` on a midpoint (w, z) lattice.

    Costs ``cells^(2n)`` evaluations; meant for small cross-checks.
    """
    _check_N(basis, N)
    lo, hi = basis.domain.bbox
    n = basis.dimension
    axes = [lo[i] + (hi[i] - lo[i]) * (np.arange(cells) + 0.5) / cells for i in range(n)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n)
    dw = float(np.prod((hi - lo) / cells))
    U = evaluate_many(basis, np.arange(1, N + 1), pts)
    Qwz = (U.T @ U) / N
    return float(np.sum(Qwz**2) * N * dw * dw)


def shifted_l2_identity(field, domain=None):
    """Per-x ``int_{|y|<=R} |Q~_N(x, y)|^2 dy`` and the limit tail beyond ``R``.

    Returns ``(integral, tail)``; ``integral + tail`` approximates
    ``rho_N(x)``.
    """
    if field.kind != "Q_shifted" or field.y_lattice is None:
        raise KindMismatch("needs a Q_shifted field on a y lattice")
    ylat = field.y_lattice
    mask = ylat.ball_mask
    integral = np.sum(np.abs(field.values[:, mask]) ** 2, axis=1) * ylat.cell
    tail = limit_Q_tail(domain, ylat.extent) if domain is not None else 0.0
    return integral, tail
