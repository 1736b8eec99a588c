"""Semiclassical Weyl quantization ``a^w(x, hD)`` on lattices.

Conventions
-----------
``F v(z) = int exp(-i z.eta) v(eta) d eta``.  For a separable symbol
``a(x, xi) = a1(x) a2(xi)`` the Weyl kernel is

    k(x, y) = a1((x + y) / 2) (2 pi h)^-n F a2((y - x) / h),

and ``(a^w u)(x) = int k(x, y) u(y) dy``.  A symbol with ``a2 = 1`` is a
multiplication operator.

Symbols are finite sums of separable terms.  Terms whose factors are
products of one-dimensional functions (``Symbol.product``) admit Kronecker
kernels and, on box bases, fully one-dimensional Cesaro averages.
"""

import functools
import itertools
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import interpolate
from scipy.sparse import linalg as splinalg

from .errors import GridMismatch, LatticeMismatch, NTooLarge, NyquistViolation
from .geometry import Grid, domain_quadrature
from .special import ball_volume
from .weyl import gamma as weyl_gamma

NEGLIGIBLE = 1e-12
PERIODIZATION_TOL = 1e-8
DENSE_ENTRY_LIMIT = 1.2e8


# one-dimensional building blocks -------------------------------------------

@dataclass(frozen=True)
class Gaussian1D:
    """``amplitude * exp(-(t - center)^2 / (2 width^2))`` with its exact transform."""

    center: float = 0.0
    width: float = 1.0
    amplitude: float = 1.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.amplitude * np.exp(-0.5 * ((t - self.center) / self.width) ** 2)

    def fourier(self, z):
        z = np.asarray(z, dtype=float)
        w = self.width
        val = self.amplitude * w * math.sqrt(2 * math.pi) * np.exp(-0.5 * (w * z) ** 2)
        if self.center == 0.0:
            return val
        return val * np.exp(-1j * z * self.center)

    def __mul__(self, other):
        if not isinstance(other, Gaussian1D):
            return NotImplemented
        p1, p2 = self.width**-2, other.width**-2
        w2 = 1.0 / (p1 + p2)
        c = w2 * (self.center * p1 + other.center * p2)
        amp = self.amplitude * other.amplitude * math.exp(
            -0.5 * (self.center - other.center) ** 2 / (self.width**2 + other.width**2))
        return Gaussian1D(c, math.sqrt(w2), amp)

    def reach(self, tol=NEGLIGIBLE):
        """Half-width beyond which the function is below ``tol * amplitude``."""
        return abs(self.center) + self.width * math.sqrt(-2 * math.log(tol))

    def hat_reach(self, tol=NEGLIGIBLE):
        return math.sqrt(-2 * math.log(tol)) / self.width


@dataclass(frozen=True)
class QuadraticGaussian1D:
    """``((t - c) / w)^2 exp(-(t - c)^2 / (2 w^2))``: nonnegative, vanishing at ``c``."""

    center: float = 0.0
    width: float = 1.0

    def __call__(self, t):
        u = (np.asarray(t, dtype=float) - self.center) / self.width
        return u**2 * np.exp(-0.5 * u**2)

    def fourier(self, z):
        wz = self.width * np.asarray(z, dtype=float)
        val = self.width * math.sqrt(2 * math.pi) * (1 - wz**2) * np.exp(-0.5 * wz**2)
        return val if self.center == 0.0 else val * np.exp(-1j * np.asarray(z) * self.center)

    def reach(self, tol=NEGLIGIBLE):
        return abs(self.center) + self.width * math.sqrt(-2 * math.log(tol) + 8)

    def hat_reach(self, tol=NEGLIGIBLE):
        return math.sqrt(-2 * math.log(tol) + 8) / self.width


@dataclass(frozen=True)
class Product1D:
    """Pointwise product of one-dimensional callables."""

    parts: tuple

    def __call__(self, t):
        out = 1.0
        for p in self.parts:
            out = out * p(t)
        return out


def _mul1d(f, g):
    if f is None:
        return g
    if g is None:
        return f
    if isinstance(f, Gaussian1D) and isinstance(g, Gaussian1D):
        return f * g
    return Product1D((f, g))


def _hat1d(g):
    return getattr(g, "fourier", None)


# symbols --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Term:
    """One separable term ``coef * a1(x) * a2(xi)``; ``None`` factors mean 1."""

    coef: complex = 1.0
    a1: object = None
    a2: object = None
    a2_hat: object = None
    x_axes: tuple = None
    xi_axes: tuple = None
    sampled: object = None

    @property
    def is_product(self):
        return self.x_axes is not None and self.xi_axes is not None

    @property
    def multiplication(self):
        return self.a2 is None and self.sampled is None


def _axis_product(factors):
    if all(f is None for f in factors):
        return None

    def fn(points):
        points = np.atleast_2d(points)
        out = np.ones(len(points))
        for i, f in enumerate(factors):
            if f is not None:
                out = out * f(points[:, i])
        return out
    return fn


def _axis_hat(factors):
    hats = [None if f is None else _hat1d(f) for f in factors]
    if any(f is not None and h is None for f, h in zip(factors, hats)):
        return None

    def fn(z):
        z = np.atleast_2d(z)
        out = np.ones(len(z), dtype=complex)
        for i, hfn in enumerate(hats):
            if hfn is not None:
                out = out * hfn(z[:, i])
        return out if np.any(out.imag) else out.real
    return fn


@dataclass(frozen=True, eq=False)
class SampledSymbol:
    """``a(x, eta)`` tabulated on tensor lattices ``x_axes`` x ``eta_axes``."""

    x_axes: tuple
    eta_axes: tuple
    values: np.ndarray

    def __post_init__(self):
        shape = tuple(len(a) for a in self.x_axes) + tuple(len(a) for a in self.eta_axes)
        if self.values.shape != shape:
            raise ValueError(f"sampled values have shape {self.values.shape}, expected {shape}")

    def interpolator(self):
        return interpolate.RegularGridInterpolator(
            tuple(self.x_axes) + tuple(self.eta_axes), self.values,
            method="linear", bounds_error=False, fill_value=0.0)


@dataclass(frozen=True, eq=False)
class Symbol:
    """Phase-space symbol as a sum of separable terms.

    Attributes
    ----------
    terms : tuple of Term
    dimension : int
    name : str
    nonnegative : bool
        Declared ``a >= 0`` (required by :func:`garding_min`).
    support : tuple of arrays or None
        Box ``(lo, hi)`` outside which every ``a1`` is negligible; ``None``
        for symbols that are not localized in ``x``.
    sup_norms : dict
        Declared class-S bounds (metadata only).
    """

    terms: tuple
    dimension: int
    name: str = "symbol"
    nonnegative: bool = False
    support: tuple = None
    sup_norms: dict = field(default_factory=dict)

    # constructors -------------------------------------------------------
    @classmethod
    def constant(cls, value=1.0, dimension=2):
        n = dimension
        term = Term(coef=value, x_axes=(None,) * n, xi_axes=(None,) * n)
        return cls((term,), n, "constant", nonnegative=np.real(value) >= 0 and np.imag(value) == 0,
                   sup_norms={0: abs(value), 1: 0.0, 2: 0.0})

    @classmethod
    def separable(cls, a1=None, a2=None, a2_hat=None, dimension=2, name="separable",
                  nonnegative=False, support=None):
        term = Term(1.0, a1, a2, a2_hat)
        return cls((term,), dimension, name, nonnegative, support)

    @classmethod
    def product(cls, x_factors, xi_factors, name="product", nonnegative=False, support=None):
        """Fully separable ``prod_i f_i(x_i) g_i(xi_i)``; ``None`` factors mean 1."""
        x_factors, xi_factors = tuple(x_factors), tuple(xi_factors)
        n = len(x_factors)
        if len(xi_factors) != n:
            raise ValueError("need one x factor and one xi factor per axis")
        term = Term(1.0, _axis_product(x_factors), _axis_product(xi_factors),
                    _axis_hat(xi_factors), x_factors, xi_factors)
        if support is None and all(f is None or hasattr(f, "reach") for f in x_factors) \
                and all(f is not None for f in x_factors):
            half = np.array([f.reach() - abs(f.center) for f in x_factors])
            cen = np.array([f.center for f in x_factors])
            support = (cen - half, cen + half)
        return cls((term,), n, name, nonnegative, support)

    @classmethod
    def sampled(cls, x_axes, eta_axes, values, name="sampled", nonnegative=False):
        s = SampledSymbol(tuple(map(np.asarray, x_axes)), tuple(map(np.asarray, eta_axes)),
                          np.asarray(values))
        lo = np.array([a[0] for a in s.x_axes])
        hi = np.array([a[-1] for a in s.x_axes])
        return cls((Term(1.0, sampled=s),), len(x_axes), name, nonnegative, (lo, hi))

    # algebra ------------------------------------------------------------
    def __add__(self, other):
        if np.isscalar(other):
            other = Symbol.constant(other, self.dimension)
        if other.dimension != self.dimension:
            raise ValueError("dimension mismatch")
        support = None
        if self.support is not None and other.support is not None:
            support = (np.minimum(self.support[0], other.support[0]),
                       np.maximum(self.support[1], other.support[1]))
        elif self._is_constant():
            support = other.support
        elif other._is_constant():
            support = self.support
        return Symbol(self.terms + other.terms, self.dimension, f"{self.name}+{other.name}",
                      self.nonnegative and other.nonnegative, support)

    __radd__ = __add__

    def __mul__(self, other):
        if np.isscalar(other):
            terms = tuple(replace(t, coef=t.coef * other) for t in self.terms)
            nonneg = self.nonnegative and np.isreal(other) and np.real(other) >= 0
            return Symbol(terms, self.dimension, self.name, nonneg, self.support)
        if any(t.sampled is not None for t in self.terms + other.terms):
            raise TypeError("products of sampled symbols are not supported")
        terms = []
        for s, t in itertools.product(self.terms, other.terms):
            terms.append(_term_product(s, t, self.dimension))
        if self._is_constant():
            support = other.support
        elif other._is_constant():
            support = self.support
        elif self.support is None:
            support = other.support
        elif other.support is None:
            support = self.support
        else:
            support = (np.maximum(self.support[0], other.support[0]),
                       np.minimum(self.support[1], other.support[1]))
            support = (np.minimum(support[0], support[1]), np.maximum(support[0], support[1]))
        return Symbol(tuple(terms), self.dimension, f"{self.name}*{other.name}",
                      self.nonnegative and other.nonnegative, support)

    __rmul__ = __mul__

    def _is_constant(self):
        return all(t.a1 is None and t.a2 is None and t.sampled is None for t in self.terms)

    @property
    def is_real(self):
        return all(np.isreal(t.coef) for t in self.terms) and all(
            t.sampled is None or np.isrealobj(t.sampled.values) for t in self.terms)

    @property
    def is_product(self):
        return all(t.is_product for t in self.terms)

    def __call__(self, x, xi):
        """Evaluate ``a(x, xi)`` at paired points of shape ``(P, n)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        out = np.zeros(len(x), dtype=complex)
        for t in self.terms:
            if t.sampled is not None:
                out += t.coef * t.sampled.interpolator()(np.hstack([x, xi]))
                continue
            v = np.full(len(x), t.coef, dtype=complex)
            if t.a1 is not None:
                v = v * t.a1(x)
            if t.a2 is not None:
                v = v * t.a2(xi)
            out += v
        return out.real if self.is_real and not np.any(out.imag) else out


def _term_product(s, t, n):
    if s.is_product and t.is_product:
        xf = tuple(_mul1d(f, g) for f, g in zip(s.x_axes, t.x_axes))
        gf = tuple(_mul1d(f, g) for f, g in zip(s.xi_axes, t.xi_axes))
        return Term(s.coef * t.coef, _axis_product(xf), _axis_product(gf), _axis_hat(gf), xf, gf)

    def mul(f, g):
        if f is None:
            return g
        if g is None:
            return f
        return lambda p: f(p) * g(p)
    return Term(s.coef * t.coef, mul(s.a1, t.a1), mul(s.a2, t.a2), None)


def gaussian_bump(center, width, dimension=None, amplitude=1.0):
    """Symbol ``amplitude * exp(-|x - c|^2 / (2 w^2))`` (multiplication operator)."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    n = dimension or len(center)
    center = np.broadcast_to(center, (n,))
    xf = [Gaussian1D(float(c), float(width)) for c in center]
    xf[0] = Gaussian1D(float(center[0]), float(width), float(amplitude))
    return Symbol.product(xf, (None,) * n, name="x-bump", nonnegative=amplitude >= 0)


def gaussian_xi(dimension=2, width=1.0, center=None):
    """Symbol ``exp(-|xi - c|^2 / (2 w^2))`` independent of ``x``."""
    c = np.zeros(dimension) if center is None else np.broadcast_to(np.asarray(center, float), (dimension,))
    gf = [Gaussian1D(float(ci), float(width)) for ci in c]
    return Symbol.product((None,) * dimension, gf, name="gaussian-xi", nonnegative=True)


def gaussian_product(x_center, x_width, dimension=2, xi_width=1.0, xi_center=None):
    """Gaussian bump in ``x`` times Gaussian in ``xi``."""
    return Symbol(
        (gaussian_bump(x_center, x_width, dimension) * gaussian_xi(dimension, xi_width, xi_center)).terms,
        dimension, "product", True,
        gaussian_bump(x_center, x_width, dimension).support)


def preset(name, domain, **params):
    """Named symbols used by run configurations.

    ``constant``, ``x-bump``, ``gaussian-xi`` and ``product``; the bump is
    centred at the middle of the bounding box with width ``x_width``
    (default 0.08 times the shortest side).
    """
    n = domain.dimension
    lo, hi = domain.bbox
    center = params.get("x_center", 0.5 * (lo + hi))
    x_width = float(params.get("x_width", 0.08 * float(np.min(hi - lo))))
    xi_width = float(params.get("xi_width", 1.0))
    if name == "constant":
        return Symbol.constant(float(params.get("value", 1.0)), n)
    if name == "x-bump":
        return gaussian_bump(center, x_width, n)
    if name == "gaussian-xi":
        return gaussian_xi(n, xi_width)
    if name == "product":
        return gaussian_product(center, x_width, n, xi_width)
    raise KeyError(f"unknown symbol preset {name!r}")


PRESETS = ("constant", "x-bump", "gaussian-xi", "product")


# lattices -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Lattice:
    """Uniform tensor lattice, optionally masked to a subset of nodes.

    Functions on the lattice are vectors over the unmasked nodes in
    lexicographic order; the inner product carries the cell measure.
    """

    axes: tuple
    mask: np.ndarray = None

    @classmethod
    def from_grid(cls, grid):
        axes = tuple(grid.axis_coordinates(i) for i in range(len(grid.shape)))
        return cls(axes, grid.index >= 0)

    @classmethod
    def box(cls, lo, hi, spacing):
        axes = []
        for a, b in zip(np.atleast_1d(lo), np.atleast_1d(hi)):
            m = max(1, int(math.ceil((b - a) / spacing - 1e-9)))
            axes.append(np.linspace(a, b, m + 1))
        return cls(tuple(axes))

    @property
    def dimension(self):
        return len(self.axes)

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    @property
    def spacing(self):
        return np.array([a[1] - a[0] if len(a) > 1 else 1.0 for a in self.axes])

    @property
    def cell(self):
        return float(np.prod(self.spacing))

    @property
    def index(self):
        """Lattice multi-indices of the active nodes, shape ``(P, n)``."""
        if self.mask is None:
            return np.stack(np.meshgrid(*[np.arange(s) for s in self.shape], indexing="ij"),
                            -1).reshape(-1, self.dimension)
        return np.argwhere(self.mask)

    @property
    def points(self):
        idx = self.index
        return np.stack([self.axes[i][idx[:, i]] for i in range(self.dimension)], 1)

    @property
    def size(self):
        return int(np.prod(self.shape)) if self.mask is None else int(self.mask.sum())

    def inner(self, u, v):
        return np.vdot(u, v) * self.cell


def _as_lattice(grid):
    if isinstance(grid, Lattice):
        return grid
    if isinstance(grid, Grid):
        return Lattice.from_grid(grid)
    raise TypeError("expected a Grid or Lattice")


# kernels --------------------------------------------------------------------

def _band_check(values_edge, values_all, what):
    peak = np.max(np.abs(values_all))
    edge = np.max(np.abs(values_edge)) if np.size(values_edge) else 0.0
    if peak > 0 and edge > PERIODIZATION_TOL * peak:
        raise NyquistViolation(
            f"{what}: |a2| = {edge / peak:.2e} x peak at the band edge pi*h/spacing; "
            "refine the lattice or increase h")


def _dft_hat(a2, spacing, h, offsets):
    """``F a2(k spacing / h)`` for integer offsets ``|k| <= offsets`` (per axis), by FFT.

    The eta lattice is chosen so that the FFT frequencies land exactly on the
    needed kernel arguments; its band is ``|eta_i| <= pi h / spacing_i``.
    The length is doubled until the result is stable to 1e-8 (periodization).
    """
    spacing = np.atleast_1d(spacing)
    offsets = np.atleast_1d(offsets)
    n = len(spacing)
    M = np.array([max(16, 1 << int(math.ceil(math.log2(2 * o + 2)))) for o in offsets])
    prev = None
    for _ in range(6):
        deta = 2 * math.pi * h / (M * spacing)
        ks = [np.fft.fftfreq(int(m), 1.0 / m) for m in M]
        eta = np.stack(np.meshgrid(*[k * d for k, d in zip(ks, deta)], indexing="ij"), -1)
        vals = np.asarray(a2(eta.reshape(-1, n))).reshape(eta.shape[:-1])
        edge = np.zeros(vals.shape, dtype=bool)
        for i, m in enumerate(M):
            sl = [slice(None)] * n
            sl[i] = int(m) // 2
            edge[tuple(sl)] = True
        _band_check(vals[edge], vals, "kernel transform")
        hat = np.fft.fftn(vals) * float(np.prod(deta))
        sel = np.ix_(*[np.r_[np.arange(0, o + 1), np.arange(-o, 0)] % m for o, m in zip(offsets, M)])
        cur = hat[sel]
        if prev is not None:
            scale = max(np.max(np.abs(cur)), 1e-300)
            if np.max(np.abs(cur - prev)) <= PERIODIZATION_TOL * scale:
                break
        prev = cur
        M = M * 2
    else:
        raise NyquistViolation("kernel transform did not stabilise under lattice doubling")
    # reorder to offsets -o..o per axis
    for i, o in enumerate(offsets):
        cur = np.roll(cur, o, axis=i)
    return cur if np.any(np.abs(cur.imag) > 1e-15 * np.abs(cur).max()) else cur.real


def _hat_table(term, spacing, h, offsets):
    """Kernel transform at ``z = k * spacing / h`` on the offset lattice."""
    spacing = np.atleast_1d(spacing)
    offsets = np.atleast_1d(offsets)
    if term.a2_hat is not None:
        z = np.stack(np.meshgrid(*[np.arange(-o, o + 1) * d / h for o, d in zip(offsets, spacing)],
                                 indexing="ij"), -1)
        return np.asarray(term.a2_hat(z.reshape(-1, len(spacing)))).reshape(z.shape[:-1])
    return _dft_hat(term.a2, spacing, h, offsets)


def _axis_operator(f, g, axis_coords, h):
    """Weighted 1D kernel matrix of ``(f g)^w`` on a uniform axis."""
    x = np.asarray(axis_coords)
    d = x[1] - x[0] if len(x) > 1 else 1.0
    if g is None:
        return np.diag(np.ones(len(x)) if f is None else f(x))
    M = len(x)
    hatfn = _hat1d(g)
    if hatfn is not None:
        hat = hatfn(np.arange(-(M - 1), M) * d / h)
    else:
        hat = _dft_hat(lambda eta: g(eta[:, 0]), [d], h, [M - 1])
    i = np.arange(M)
    diff = i[None, :] - i[:, None] + (M - 1)
    K = hat[diff] / (2 * math.pi * h)
    if f is not None:
        K = K * f(0.5 * (x[:, None] + x[None, :]))
    return K * d


@dataclass(frozen=True, eq=False)
class QuantizedOperator:
    """``a^w(x, hD)`` realised on a lattice.

    Each term is stored as one of: ``("mult", values)`` diagonal,
    ``("kron", [matrices])`` per-axis weighted kernels on a full tensor
    lattice, or ``("dense", matrix)`` weighted kernel; weighted means the
    quadrature cell is folded in so that application is a plain product.
    """

    symbol: Symbol
    h: float
    lattice: Lattice
    parts: tuple

    @property
    def size(self):
        return self.lattice.size

    def apply(self, u):
        u = np.asarray(u)
        if u.shape[0] != self.size:
            raise GridMismatch(f"vector of length {u.shape[0]} on a lattice of {self.size} nodes")
        out = None
        for coef, kind, data in self.parts:
            if kind == "mult":
                v = data.reshape((-1,) + (1,) * (u.ndim - 1)) * u
            elif kind == "dense":
                v = data @ u
            else:
                shape = self.lattice.shape
                X = u.reshape(shape + u.shape[1:])
                for axis, mat in enumerate(data):
                    X = np.moveaxis(np.tensordot(mat, X, axes=([1], [axis])), 0, axis)
                v = X.reshape(u.shape)
            v = coef * v
            out = v if out is None else out + v
        return out

    __matmul__ = apply

    def matrix(self):
        """Dense weighted matrix (kernel times cell measure)."""
        P = self.size
        if P * P > DENSE_ENTRY_LIMIT:
            raise MemoryError(f"dense matrix of {P} nodes is too large")
        return self.apply(np.eye(P))

    def kernel(self):
        """Dense kernel matrix ``k(x_p, x_q)`` (diagonal terms as delta / cell)."""
        return self.matrix() / self.lattice.cell

    def adjoint_apply(self, u):
        out = None
        for coef, kind, data in self.parts:
            if kind == "mult":
                v = np.conj(data).reshape((-1,) + (1,) * (u.ndim - 1)) * u
            elif kind == "dense":
                v = data.conj().T @ u
            else:
                X = u.reshape(self.lattice.shape + u.shape[1:])
                for axis, mat in enumerate(data):
                    X = np.moveaxis(np.tensordot(mat.conj().T, X, axes=([1], [axis])), 0, axis)
                v = X.reshape(u.shape)
            v = np.conj(coef) * v
            out = v if out is None else out + v
        return out


def build_kernel(symbol, h, grid):
    """Realise ``a^w(x, hD)`` on the nodes of ``grid`` (a Grid or Lattice).

    Analytic transforms are used when the symbol carries them; otherwise the
    transform of ``a2`` is computed by FFT on an eta lattice matched to the
    grid, which must cover ``|eta| <= pi h / spacing`` with ``a2`` negligible
    (1e-8 of its peak) at the band edge.

    Raises
    ------
    NyquistViolation
        If the band edge or the sampled symbol lattice does not resolve ``a2``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    lat = _as_lattice(grid)
    if lat.dimension != symbol.dimension:
        raise GridMismatch("symbol and lattice dimensions differ")
    n = lat.dimension
    pts = lat.points
    idx = lat.index
    spacing = lat.spacing
    parts = []
    for t in symbol.terms:
        if t.sampled is not None:
            parts.append((t.coef, "dense", _sampled_kernel(t.sampled, h, lat)))
            continue
        if t.multiplication:
            vals = np.ones(len(pts)) if t.a1 is None else np.asarray(t.a1(pts))
            parts.append((t.coef, "mult", vals))
            continue
        if t.is_product and lat.mask is None:
            mats = [_axis_operator(f, g, lat.axes[i], h) for i, (f, g) in
                    enumerate(zip(t.x_axes, t.xi_axes))]
            parts.append((t.coef, "kron", mats))
            continue
        P = len(pts)
        if P * P > DENSE_ENTRY_LIMIT:
            raise MemoryError(f"dense kernel on {P} nodes is too large")
        offsets = np.array(lat.shape) - 1
        hat = _hat_table(t, spacing, h, offsets)
        diff = idx[None, :, :] - idx[:, None, :] + offsets
        K = hat[tuple(np.moveaxis(diff, -1, 0))] / (2 * math.pi * h) ** n
        if t.a1 is not None:
            mid = 0.5 * (pts[:, None, :] + pts[None, :, :])
            K = K * np.asarray(t.a1(mid.reshape(-1, n))).reshape(P, P)
        parts.append((t.coef, "dense", K * lat.cell))
    return QuantizedOperator(symbol, float(h), lat, tuple(parts))


def _sampled_kernel(s, h, lat):
    n = lat.dimension
    band = math.pi * h / lat.spacing
    for i, ax in enumerate(s.eta_axes):
        if ax[0] > -band[i] + 1e-12 * band[i] or ax[-1] < band[i] - 1e-12 * band[i]:
            # lattice edge inside the band: the symbol must already be negligible there
            edge = np.take(s.values, [0, -1], axis=n + i)
            _band_check(edge, s.values, "sampled symbol")
    etas = np.stack(np.meshgrid(*s.eta_axes, indexing="ij"), -1).reshape(-1, n)
    w = functools.reduce(np.multiply, np.ix_(*[_trap_weights(a) for a in s.eta_axes])).ravel()
    pts = lat.points
    P = len(pts)
    interp = interpolate.RegularGridInterpolator(tuple(s.x_axes), s.values.reshape(
        tuple(len(a) for a in s.x_axes) + (-1,)), bounds_error=False, fill_value=0.0)
    mid = 0.5 * (pts[:, None, :] + pts[None, :, :])
    amid = interp(mid.reshape(-1, n))  # (P*P, n_eta)
    z = ((pts[None, :, :] - pts[:, None, :]) / h).reshape(-1, n)
    phase = np.exp(-1j * z @ etas.T)
    hat = np.sum(amid * phase * w, axis=1).reshape(P, P)
    return hat / (2 * math.pi * h) ** n * lat.cell


def _trap_weights(a):
    a = np.asarray(a)
    if len(a) == 1:
        return np.ones(1)
    w = np.full(len(a), a[1] - a[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def quadratic_form(opr, u):
    """``<u, a^w u>`` with the lattice inner product.

    Raises
    ------
    GridMismatch
        If ``u`` does not live on the operator's lattice.
    """
    u = np.asarray(u)
    if u.ndim != 1 or u.shape[0] != opr.size:
        raise GridMismatch(f"u of shape {u.shape} on a lattice of {opr.size} nodes")
    val = np.vdot(u, opr.apply(u)) * opr.lattice.cell
    return complex(val)


# Cesaro averages ------------------------------------------------------------

def _check_N(basis, N):
    if N < 1 or N > basis.K:
        raise NTooLarge(f"N={N} exceeds the {basis.K} computed eigenpairs")


def _xi_band(g, tol=NEGLIGIBLE):
    """Radius beyond which a 1D factor ``g`` stays below ``tol`` of its peak."""
    if g is None:
        return 0.0
    if hasattr(g, "reach"):
        return g.reach(tol)
    t = np.linspace(-200, 200, 40001)
    v = np.abs(g(t))
    big = np.nonzero(v > tol * v.max())[0]
    return float(max(abs(t[big[0]]), abs(t[big[-1]])))


def _hat_reach(g, tol=NEGLIGIBLE):
    if g is None:
        return 0.0
    if hasattr(g, "hat_reach"):
        return g.hat_reach(tol)
    band = _xi_band(g, 1e-14)
    z = np.linspace(0, 400, 4001)
    eta = np.linspace(-band, band, 8001)
    w = _trap_weights(eta)
    hat = np.abs(np.exp(-1j * np.outer(z, eta)) @ (g(eta) * w))
    big = np.nonzero(hat > tol * hat.max())[0]
    return float(z[big[-1]])


def _fast_box_applicable(basis, symbol):
    return basis.representation == "analytic" and symbol.is_product


def _box_axis_lattice(L, spacing):
    M = max(2, int(math.ceil(L / spacing)))
    x = np.linspace(0.0, L, M + 1)
    w = np.full(M + 1, L / M)
    w[0] *= 0.5
    w[-1] *= 0.5
    return x, w


def _direct_spacing(basis, symbol, h, N):
    jmax = int(basis.modes[:N].max()) + 1
    sp = min(basis.lengths) / (6.0 * jmax)
    for t in symbol.terms:
        for g in t.xi_axes:
            if g is not None:
                sp = min(sp, math.pi * h / max(_xi_band(g), 1e-300) * 0.999)
    return sp


def _cesaro_direct_box(basis, symbol, N, spacing=None):
    h = N ** (-1.0 / basis.dimension)
    spacing = spacing or _direct_spacing(basis, symbol, h, N)
    modes = basis.modes[:N]
    total = 0.0
    for t in symbol.terms:
        prod = np.full(N, 1.0 + 0j)
        for axis in range(basis.dimension):
            f, g = t.x_axes[axis], t.xi_axes[axis]
            if f is None and g is None:
                continue
            L = basis.lengths[axis]
            jmax = int(modes[:, axis].max())
            if g is not None and _hat1d(g) is not None:
                # the integrand is smooth on the closed box, so Gauss nodes converge fast
                x, w = np.polynomial.legendre.leggauss(max(32, int(math.ceil(2.0 * L / spacing))))
                x, w = 0.5 * L * (x + 1), 0.5 * L * w
                K = _hat1d(g)((x[None, :] - x[:, None]) / h) / (2 * math.pi * h)
                if f is not None:
                    K = K * f(0.5 * (x[:, None] + x[None, :]))
                phi = basis.mode_table(axis, x, jmax) * w
                D = np.einsum("jp,pq,jq->j", phi, K, phi)
                prod *= D[modes[:, axis]]
                continue
            x, w = _box_axis_lattice(L, spacing)
            phi = basis.mode_table(axis, x, jmax) * w  # weighted
            if g is None:
                D = (phi * basis.mode_table(axis, x, jmax)) @ f(x)
            else:
                K = _axis_operator(f, g, x, h) / (x[1] - x[0])  # plain kernel
                D = np.einsum("jp,pq,jq->j", phi, K, phi)
            prod *= D[modes[:, axis]]
        total += t.coef * prod.sum()
    return complex(total / N)


def _cesaro_direct_generic(basis, symbol, N, resolution=None):
    h = N ** (-1.0 / basis.dimension)
    from .spectral import evaluate_many
    if basis.representation == "grid":
        lat = Lattice.from_grid(basis.grid)
        U = basis.vectors[:, :N]
    else:
        from .geometry import build_grid
        band = max([_xi_band(g) for t in symbol.terms if t.xi_axes for g in t.xi_axes] + [1.0])
        res = resolution or max(8.0, band / (math.pi * h) * 1.01,
                                6.0 * (basis.modes[:N].max() + 1) / min(basis.lengths))
        g = build_grid(basis.domain, res)
        lat = Lattice.from_grid(g)
        U = evaluate_many(basis, np.arange(1, N + 1), lat.points).T
    op = build_kernel(symbol, h, lat)
    AU = op.apply(U)
    return complex(np.sum(np.conj(U) * AU) * lat.cell / N)


def cesaro_average_direct(basis, symbol, N, spacing=None):
    """``N^-1 sum_{k<=N} <u_k, a^w(x, N^{-1/n} D) u_k>``.

    Box bases with product symbols reduce exactly to one-dimensional kernel
    quadratures per axis (trapezoid lattice of the given ``spacing``).
    Other cases build the kernel on a grid of the domain.

    Raises
    ------
    NTooLarge
        If ``N`` exceeds the number of computed eigenpairs.
    """
    _check_N(basis, N)
    if _fast_box_applicable(basis, symbol):
        return _real_if(symbol, _cesaro_direct_box(basis, symbol, N, spacing))
    return _real_if(symbol, _cesaro_direct_generic(basis, symbol, N,
                                                   None if spacing is None else 1.0 / spacing))


def _wigner_y_extent(symbol, tol=NEGLIGIBLE):
    reach = 0.0
    for t in symbol.terms:
        if t.xi_axes is not None:
            reach = max([reach] + [_hat_reach(g, tol) for g in t.xi_axes])
        elif t.a2 is not None:
            reach = max(reach, 12.0)
    return reach


def _cesaro_wigner_box(basis, symbol, N, x_spacing=None, y_spacing=None, y_extent=None):
    n = basis.dimension
    s = N ** (-1.0 / n)
    modes = basis.modes[:N]
    total = 0.0
    R = y_extent or _wigner_y_extent(symbol)
    for t in symbol.terms:
        prod = np.full(N, 1.0 + 0j)
        for axis in range(n):
            f, g = t.x_axes[axis], t.xi_axes[axis]
            if f is None and g is None:
                continue
            L = basis.lengths[axis]
            jmax = int(modes[:, axis].max())
            dx = x_spacing or L / (6.0 * (jmax + 1))
            x, wx = _box_axis_lattice(L, dx)
            fx = np.ones_like(x) if f is None else f(x)
            if g is None:
                # F 1 = 2 pi delta: the y-integral collapses onto y = 0
                E = (basis.mode_table(axis, x, jmax) ** 2) @ (wx * fx)
            else:
                hatfn = _hat1d(g)
                dy = y_spacing or min(0.125, 0.5 * math.pi / (math.pi * s * (jmax + 1) + _xi_band(g)))
                M = int(math.ceil(R / dy))
                y = dy * np.arange(-M, M + 1)
                ghat = hatfn(y) if hatfn is not None else _numeric_hat(g, y)
                wy = np.full(len(y), dy)
                if f is None:
                    # exact x-integral of phi_j(x + t) phi_j(x - t); it is smooth between
                    # y = 0 and the cutoff 2L/s, so Gauss panels split there
                    yq, wq = _split_gauss(min(R, 2 * L / s), 4 * dy)
                    gq = hatfn(yq) if hatfn is not None else _numeric_hat(g, yq)
                    E = _mode_overlap(basis.bc, L, jmax, 0.5 * s * yq) @ (wq * gq) / (2 * math.pi)
                else:
                    plus = basis.mode_table(axis, x[:, None] + 0.5 * s * y[None, :], jmax)
                    minus = basis.mode_table(axis, x[:, None] - 0.5 * s * y[None, :], jmax)
                    E = np.einsum("jxy,x,y->j", plus * minus, wx * fx, wy * ghat) / (2 * math.pi)
            prod *= E[modes[:, axis]]
        total += t.coef * prod.sum()
    return complex(total / N)


def _split_gauss(Y, panel, order=16):
    """Panelled Gauss rule on ``[-Y, 0] u [0, Y]``."""
    k = max(1, int(math.ceil(Y / panel)))
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, Y, k + 1)
    half = 0.5 * np.diff(edges)
    y = ((edges[:-1] + half)[:, None] + half[:, None] * x[None, :]).ravel()
    wy = (half[:, None] * w[None, :]).ravel()
    return np.concatenate([-y[::-1], y]), np.concatenate([wy[::-1], wy])


def _mode_overlap(bc, L, jmax, t):
    """``int_0^L phi_j(x + t) phi_j(x - t) dx`` for box modes, shape ``(jmax + 1, len(t))``."""
    at = np.minimum(np.abs(t), 0.5 * L)[None, :]
    a = (math.pi * np.arange(jmax + 1) / L)[:, None]
    sgn = 1.0 if bc == "dirichlet" else -1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        E = (L - 2 * at) * np.cos(2 * a * at) / L + sgn * np.sin(2 * a * at) / (a * L)
    E[0] = 0.0 if bc == "dirichlet" else (L - 2 * at[0]) / L
    return E


def _numeric_hat(g, z):
    band = _xi_band(g, 1e-14)
    eta = np.linspace(-band, band, 16001)
    w = _trap_weights(eta)
    return np.exp(-1j * np.outer(z, eta)) @ (g(eta) * w)


def _cesaro_wigner_generic(basis, symbol, N, x_spacing, y_spacing, y_extent, field=None):
    from .correlation import YLattice, one_body_density, one_body_matrix
    n = basis.dimension
    lo, hi = basis.domain.bbox
    dx = x_spacing or float(np.min(hi - lo)) / 60.0
    lat = Lattice.box(lo, hi, dx)
    xpts = lat.points
    wx = functools.reduce(np.multiply, np.ix_(*[_trap_weights(a) for a in lat.axes])).ravel()
    total = 0.0
    for t in symbol.terms:
        ax = np.ones(len(xpts)) if t.a1 is None else np.asarray(t.a1(xpts))
        keep = np.abs(ax) > NEGLIGIBLE * max(np.abs(ax).max(), 1e-300)
        if t.multiplication:
            rho = one_body_density(basis, N, xpts[keep]).values
            total += t.coef * np.sum(wx[keep] * ax[keep] * rho)
            continue
        if field is not None:
            ylat = field.y_lattice
            if field.N != N or field.kind != "Q" or len(field.x_samples) != int(keep.sum()) or \
                    not np.allclose(field.x_samples, xpts[keep]):
                raise LatticeMismatch("supplied Q_N field does not match N or the x lattice")
            Q = field.values
        else:
            R = y_extent or _wigner_y_extent(symbol)
            ylat = YLattice(n, R, y_spacing or 0.25, ball=False)
            Q = one_body_matrix(basis, N, xpts[keep], ylat).values
        ypts = ylat.points
        if t.a2_hat is not None:
            ghat = np.asarray(t.a2_hat(ypts))
        else:
            ghat = _dft_hat(t.a2, np.full(n, ylat.spacing), 1.0, np.full(n, ylat.M)).ravel()
        total += t.coef * np.sum((wx[keep] * ax[keep])[:, None] * Q * ghat[None, :]) \
            * ylat.cell / (2 * math.pi) ** n
    return complex(total)


def cesaro_average_wigner(basis, symbol, N, x_spacing=None, y_spacing=None, y_extent=None,
                          field=None):
    """The Cesaro mean through the partial Fourier transform of ``Q_N``.

    Computes ``(2 pi)^-n sum_x sum_y a1(x) F a2(y) Q_N(x, y)`` on an x lattice
    over the bounding box and a y lattice covering the support of ``F a2``.
    A precomputed ``Q_N`` field can be passed as ``field``; its x samples
    must be the active nodes of the default x lattice.

    Raises
    ------
    NTooLarge
    LatticeMismatch
        If ``field`` was sampled for another ``N`` or x lattice.
    """
    _check_N(basis, N)
    if field is None and _fast_box_applicable(basis, symbol):
        return _real_if(symbol, _cesaro_wigner_box(basis, symbol, N, x_spacing, y_spacing,
                                                   y_extent))
    return _real_if(symbol, _cesaro_wigner_generic(basis, symbol, N, x_spacing, y_spacing,
                                                   y_extent, field))


def _real_if(symbol, value):
    # real symbols quantize to self-adjoint operators, so the mean is real
    return float(np.real(value)) if symbol.is_real else complex(value)


# phase-space integral -------------------------------------------------------

def _ball_quadrature(n, radius, order):
    r, wr = np.polynomial.legendre.leggauss(order)
    r = 0.5 * radius * (r + 1)
    wr = 0.5 * radius * wr
    if n == 1:
        return np.concatenate([-r, r])[:, None], np.concatenate([wr, wr])
    if n == 2:
        m = 2 * order
        th = 2 * math.pi * np.arange(m) / m
        pts = np.stack([np.outer(r, np.cos(th)), np.outer(r, np.sin(th))], -1).reshape(-1, 2)
        w = np.outer(wr * r, np.full(m, 2 * math.pi / m)).ravel()
        return pts, w
    ct, wt = np.polynomial.legendre.leggauss(order)
    m = 2 * order
    ph = 2 * math.pi * np.arange(m) / m
    st = np.sqrt(1 - ct**2)
    om = np.stack([np.outer(st, np.cos(ph)).ravel(), np.outer(st, np.sin(ph)).ravel(),
                   np.repeat(ct, m)], 1)
    wo = np.repeat(wt, m) * (2 * math.pi / m)
    pts = (r[:, None, None] * om[None]).reshape(-1, 3)
    w = np.outer(wr * r**2, wo).ravel()
    return pts, w


def _term_integral(t, domain, gam, order):
    n = domain.dimension
    if t.sampled is not None:
        xp, xw = domain_quadrature(domain, order)
        ep, ew = _ball_quadrature(n, gam, order)
        interp = t.sampled.interpolator()
        total = 0.0
        for p, w in zip(xp, xw):
            total += w * np.sum(ew * interp(np.hstack([np.broadcast_to(p, ep.shape), ep])))
        return t.coef * total
    if t.a1 is None:
        ix = domain.volume
    else:
        xp, xw = domain_quadrature(domain, order)
        ix = np.sum(xw * t.a1(xp))
    if t.a2 is None:
        ie = ball_volume(n, gam)
    else:
        ep, ew = _ball_quadrature(n, gam, order)
        ie = np.sum(ew * t.a2(ep))
    return t.coef * ix * ie


def phase_space_integral(symbol, domain, rtol=1e-10, max_order=512):
    """``(2 pi)^-n int_{Omega x B_gamma} a(x, xi) dx dxi``.

    Tensor Gauss rules on the domain pieces and polar Gauss rules on the
    ball, doubled until successive values agree to ``rtol``.
    """
    n = domain.dimension
    gam = weyl_gamma(domain)
    order, prev = 16, None
    while True:
        val = sum(_term_integral(t, domain, gam, order) for t in symbol.terms) / (2 * math.pi) ** n
        if prev is not None and abs(val - prev) <= rtol * max(abs(val), 1e-300):
            return _real_if(symbol, val)
        if order >= max_order:
            return _real_if(symbol, val)
        prev, order = val, order * 2


# calculus checks ------------------------------------------------------------

def _calculus_lattice(symbols, h, spacing=None):
    n = symbols[0].dimension
    band, reach = 0.0, 0.0
    for sym in symbols:
        for t in sym.terms:
            if t.xi_axes is not None:
                band = max([band] + [_xi_band(g) for g in t.xi_axes])
                reach = max([reach] + [_hat_reach(g) for g in t.xi_axes])
            elif t.a2 is not None:
                raise ValueError("calculus checks need product symbols or explicit supports")
    supports = [s.support for s in symbols if s.support is not None]
    if not supports:
        lo, hi = np.full(n, -1.0), np.full(n, 1.0)
    else:
        lo = np.min([s[0] for s in supports], axis=0)
        hi = np.max([s[1] for s in supports], axis=0)
    margin = 2.0 * reach * h + 4 * h
    sp = spacing or (math.pi * h / band * 0.95 if band > 0 else h / 3.0)
    return Lattice.box(lo - margin, hi + margin, sp)


def _probes(lat, count, rng):
    """Seeded random probes with Fourier content in the lower half of the lattice band."""
    shape = lat.shape
    out = np.empty((lat.size, count), dtype=complex)
    freqs = np.meshgrid(*[np.fft.fftfreq(s) for s in shape], indexing="ij")
    low = np.all([np.abs(f) <= 0.25 for f in freqs], axis=0)
    for j in range(count):
        c = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * low
        v = np.fft.ifftn(c).ravel()
        out[:, j] = v / math.sqrt(lat.inner(v, v).real)
    return out


@dataclass(frozen=True)
class CalculusEstimate:
    value: float
    h: float
    probes: int
    lattice_shape: tuple


def composition_defect(a, b, h, probes=16, seed=0, iterations=40, spacing=None):
    """Estimate ``||a^w b^w - (ab)^w||`` on L^2.

    The norm is maximised over seeded band-limited probes, refined by block
    power iteration on ``D^* D``.  Returns a :class:`CalculusEstimate`.
    """
    if probes < 16:
        raise ValueError("at least 16 probes are required")
    ab = a * b
    lat = _calculus_lattice([a, b, ab], h, spacing)
    A, B, C = (build_kernel(s, h, lat) for s in (a, b, ab))

    def D(u):
        return A.apply(B.apply(u)) - C.apply(u)

    def Dh(u):
        return B.adjoint_apply(A.adjoint_apply(u)) - C.adjoint_apply(u)

    rng = np.random.default_rng(seed)
    X = _probes(lat, probes, rng)
    best = 0.0
    for _ in range(iterations):
        Y = D(X)
        norms = np.sqrt(np.sum(np.abs(Y) ** 2, axis=0) / np.sum(np.abs(X) ** 2, axis=0))
        best = max(best, float(norms.max()))
        if not np.any(Y):
            break
        X, _ = np.linalg.qr(Dh(Y))
    return CalculusEstimate(best, float(h), probes, lat.shape)


def garding_min(a, h, probes=16, seed=0, iterations=200, spacing=None):
    """Minimum of ``<u, a^w u> / ||u||^2`` over seeded probes, refined by LOBPCG.

    Requires ``a.nonnegative``.  Returns a :class:`CalculusEstimate`.
    """
    if not a.nonnegative:
        raise ValueError("garding_min requires a symbol declared nonnegative")
    if probes < 1:
        raise ValueError("need at least one probe")
    lat = _calculus_lattice([a], h, spacing)
    A = build_kernel(a, h, lat)
    rng = np.random.default_rng(seed)
    X = _probes(lat, probes, rng)
    # Hermitian part; the imaginary residue is checked separately
    herm = splinalg.LinearOperator((lat.size, lat.size), dtype=complex,
                                   matvec=lambda v: 0.5 * (A.apply(v) + A.adjoint_apply(v)),
                                   matmat=lambda V: 0.5 * (A.apply(V) + A.adjoint_apply(V)))
    rq = np.real(np.sum(np.conj(X) * herm.matmat(X), axis=0) / np.sum(np.abs(X) ** 2, axis=0))
    best = float(rq.min())
    if lat.size > 3 * probes:
        with warnings.catch_warnings():
            # LOBPCG reports its final accuracy as a warning; the Ritz values are still valid
            warnings.simplefilter("ignore", UserWarning)
            vals, _ = splinalg.lobpcg(herm, X, largest=False, tol=1e-9, maxiter=iterations)
        best = min(best, float(np.min(vals)))
    return CalculusEstimate(best, float(h), probes, lat.shape)


def self_adjointness_residue(opr, probes=16, seed=0):
    """``max |Im <u, a^w u>| / ||u||^2`` over seeded probes."""
    lat = opr.lattice
    if lat.mask is not None:
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((lat.size, probes)) + 1j * rng.standard_normal((lat.size, probes))
    else:
        X = _probes(lat, probes, np.random.default_rng(seed))
    num = np.sum(np.conj(X) * opr.apply(X), axis=0)
    den = np.sum(np.abs(X) ** 2, axis=0)
    return float(np.max(np.abs(num.imag) / den))
