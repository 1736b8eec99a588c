"""Spin-resolved free Fermi gas: shell filling, correlations and exchange energy.

``N`` particles with ``m`` spin states fill the orbitals ``u_1, u_2, ...``.
With ``a_N`` the largest closed shell not exceeding ``N/m`` and ``a~_N`` the
smallest one at or above it, the one-body matrix is

``Q^S_N(x, y, s1, s2) = N^-1 [ delta_{s1 s2} sum_{a <= a_N} u_a u_a
+ R_N(x + s y / 2, s1; x - s y / 2, s2) ]``

where ``R_N`` is the projector onto the ``b_N = N - m a_N`` occupied states
of the partially filled shell ``a_N < a <= a~_N``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .correlation import (CorrelationField, YLattice, _field, _tensor_pair_sum,
                          _weight_tensor, pair_sum, pair_sum_bilinear)
from .errors import (DimensionUnsupported, InsufficientSpectrum, KindMismatch, NTooLarge,
                     TailBoundExceeded)
from .spectral import evaluate_many, gram_matrix
from .special import bessel_ratio
from .weyl import fermi_momentum

SHELL_RTOL = 1e-9
TAIL_FRACTION = 0.01


# shell filling --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpinSystem:
    """Occupation of ``N`` fermions with ``m`` spin states.

    Attributes
    ----------
    a_N, b_N : int
        Closed shells below ``N/m`` and the number of particles beyond them.
    a_tilde, b_tilde : int
        Closed shells at or above ``N/m`` and the number of holes below them.
    shell : ndarray of int
        1-based orbital indices ``a_N + 1 .. a~_N`` of the partial shell.
    coupling : ndarray, shape (d, m, d, m)
        Kernel of ``R_N`` in the (orbital, spin) basis of the partial shell;
        a real orthogonal projector of rank ``b_N``.
    filling : {"ordered", "random"}
    """

    m: int
    N: int
    a_N: int
    b_N: int
    a_tilde: int
    b_tilde: int
    shell: np.ndarray
    coupling: np.ndarray
    filling: str = "ordered"
    seed: int = None

    @property
    def coupling_matrix(self):
        d = len(self.shell)
        return self.coupling.reshape(d * self.m, d * self.m)

    @property
    def spin_diagonal(self):
        """True if ``R_N`` never couples different spins or different orbitals."""
        C = self.coupling_matrix
        return bool(np.all(C == np.diag(np.diag(C))))

    def occupation_map(self):
        """Particle ``i -> (orbital, spin)``, both 1-based, for an ordered filling."""
        if self.filling != "ordered":
            raise ValueError("a recombined partial shell has no particle-wise occupation")
        return [(a, b) for a in range(1, self.a_tilde + 1) for b in range(1, self.m + 1)][:self.N]

    def occupation(self, spin):
        """1-based orbitals occupied with spin ``spin`` (diagonal fillings only)."""
        if not self.spin_diagonal:
            raise ValueError("a recombined partial shell has no orbital occupation list")
        part = self.shell[np.diag(self.coupling[:, spin, :, spin]) > 0.5]
        return np.concatenate([np.arange(1, self.a_N + 1), part]).astype(int)


def _distinct(lam, a):
    # lambda_{a+1} > lambda_a (1-based), with a = 0 always a shell boundary
    if a == 0:
        return True
    return lam[a] - lam[a - 1] > SHELL_RTOL * max(abs(lam[a]), abs(lam[a - 1]), 1e-300)


def shell_fill(eigenvalues, N, m, filling="ordered", seed=0):
    """Closed-shell decomposition of ``N`` particles with ``m`` spin states.

    ``filling="ordered"`` occupies the partial shell orbital by orbital, spin
    fastest.  ``filling="random"`` occupies a seeded random ``b_N``-dimensional
    subspace of the partial shell, which is another ground state.

    Raises
    ------
    InsufficientSpectrum
        If fewer than ``a~_N + 1`` eigenvalues are available.

    Examples
    --------
    >>> lam = [2, 5, 5, 8, 10, 10, 13, 13]
    >>> s = shell_fill(lam, 4, 2)
    >>> (s.a_N, s.b_N, s.a_tilde, s.b_tilde)
    (1, 2, 3, 2)
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if N < 1 or m < 1:
        raise ValueError("need N >= 1 and m >= 1")
    if filling not in ("ordered", "random"):
        raise ValueError(f"unknown filling {filling!r}")
    a = N // m
    if a >= len(lam):
        raise InsufficientSpectrum(f"N={N}, m={m} needs more than {len(lam)} eigenvalues")
    while not _distinct(lam, a):
        a -= 1
    at = -(-N // m)
    while True:
        if at >= len(lam):
            raise InsufficientSpectrum(
                f"cannot close the shell for N={N}, m={m} with {len(lam)} eigenvalues")
        if _distinct(lam, at):
            break
        at += 1
    b, bt = N - m * a, m * at - N
    d = at - a
    shell = np.arange(a + 1, at + 1)
    if filling == "ordered":
        C = np.zeros(d * m)
        C[:b] = 1.0
        C = np.diag(C)
    else:
        rng = np.random.default_rng(seed)
        U, _ = np.linalg.qr(rng.standard_normal((d * m, d * m)))
        V = U[:, :b]
        C = V @ V.T
    return SpinSystem(m, N, a, b, at, bt, shell, C.reshape(d, m, d, m), filling,
                      seed if filling == "random" else None)


def _check_system(basis, system):
    if system.a_tilde > basis.K:
        raise NTooLarge(f"partial shell reaches orbital {system.a_tilde}, basis has {basis.K}")


# spin fields ----------------------------------------------------------------

def spin_one_body(basis, system, x_samples, y_samples):
    """``Q^S_N`` with values of shape ``(n_x, m, m, n_y)``.

    Raises
    ------
    NTooLarge
    """
    _check_system(basis, system)
    N, m, a = system.N, system.m, system.a_N
    s = N ** (-1.0 / basis.dimension)
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    ny = (y_samples.points if isinstance(y_samples, YLattice) else np.atleast_2d(y_samples)).shape[0]
    vals = np.zeros((len(x_samples), m, m, ny))
    C = system.coupling
    for i, x in enumerate(x_samples):
        closed = (pair_sum(basis, np.arange(1, a + 1), 1.0 / N, x, y_samples, s / 2, s / 2)
                  if a > 0 else 0.0)
        for s1 in range(m):
            vals[i, s1, s1] = closed
            for s2 in range(m):
                blk = C[:, s1, :, s2]
                if not np.any(blk):
                    continue
                if np.all(blk == np.diag(np.diag(blk))):
                    vals[i, s1, s2] += pair_sum(basis, system.shell, np.diag(blk) / N, x,
                                                y_samples, s / 2, s / 2)
                else:
                    vals[i, s1, s2] += pair_sum_bilinear(basis, system.shell, blk / N, x,
                                                         y_samples, s / 2, s / 2)
    f = _field("Q_spin", basis, N, x_samples, y_samples, vals, filling=system.filling)
    return _with_m(f, m)


def _with_m(f, m, **changes):
    kw = dict(kind=f.kind, N=f.N, x_samples=f.x_samples, values=f.values, y_lattice=f.y_lattice,
              y_points=f.y_points, m=m, x_weights=f.x_weights, metadata=f.metadata)
    kw.update(changes)
    return CorrelationField(**kw)


def spin_pair_correlation(Q):
    """``P^S_N(x, y) = -1/2 sum_{s1, s2} |Q^S_N(x, y, s1, s2)|^2``.

    Raises
    ------
    KindMismatch
    """
    if Q.kind != "Q_spin":
        raise KindMismatch(f"spin_pair_correlation needs a Q_spin field, got {Q.kind}")
    vals = -0.5 * np.sum(np.abs(Q.values) ** 2, axis=(1, 2))
    return _with_m(Q, Q.m, kind="P_spin", values=vals, metadata=dict(Q.metadata))


def spin_density(basis, system, x_samples, x_weights=None):
    """``rho^S_N(x) = sum_s Q^S_N(x, 0, s, s)``; integrates to one over the domain."""
    _check_system(basis, system)
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    N, m = system.N, system.m
    rho = np.zeros(len(x_samples))
    if system.a_N:
        rho += m * np.sum(evaluate_many(basis, np.arange(1, system.a_N + 1), x_samples) ** 2,
                          axis=0)
    U = evaluate_many(basis, system.shell, x_samples)
    Cd = np.einsum("asbs->ab", system.coupling)
    rho += np.einsum("ap,ab,bp->p", U, Cd, U)
    f = _field("rho_spin", basis, N, x_samples, None, rho / N, filling=system.filling)
    return _with_m(f, m, x_weights=x_weights)


def _box_bounds(A):
    if hasattr(A, "bbox"):
        lo, hi = A.bbox
    elif hasattr(A, "box"):
        lo, hi = A.box
    else:
        lo, hi = A
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


def spin_density_quadrature(basis, system, A, order=64):
    """``rho^S_N`` on a Gauss-Legendre tensor rule over the box ``A``.

    The returned field carries the quadrature weights, so it can be passed to
    :func:`lda_exchange`.  Analytic box bases are evaluated as a tensor
    contraction; other bases point by point.
    """
    lo, hi = _box_bounds(A)
    n = len(lo)
    g, w = np.polynomial.legendre.leggauss(order)
    axes = [lo[i] + (hi[i] - lo[i]) * (g + 1) / 2 for i in range(n)]
    wax = [w * (hi[i] - lo[i]) / 2 for i in range(n)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n)
    weights = np.ones(1)
    for wa in wax:
        weights = np.multiply.outer(weights, wa)
    weights = weights.ravel()
    if basis.representation == "analytic" and system.spin_diagonal:
        _check_system(basis, system)
        rho = 0.0
        for sp in range(system.m):
            W = _weight_tensor(basis, system.occupation(sp), 1.0)
            tables = [basis.mode_table(i, axes[i], W.shape[i] - 1) ** 2 for i in range(n)]
            rho = rho + _tensor_pair_sum(W, tables).ravel()
        f = _field("rho_spin", basis, system.N, pts, None, rho / system.N,
                   filling=system.filling)
        return _with_m(f, system.m, x_weights=weights)
    return spin_density(basis, system, pts, weights)


# limits ---------------------------------------------------------------------

def _radii(y):
    if isinstance(y, YLattice):
        return y.radii
    if isinstance(y, RadialLattice):
        return np.linalg.norm(y.points, axis=1)
    y = np.asarray(y, dtype=float)
    return np.abs(y) if y.ndim == 1 else np.linalg.norm(y, axis=1)


def limit_Q_spin(domain, m, y, s1=None, s2=None):
    """``delta_{s1 s2} Lambda_{n/2}(p_F |y|) / (m |Omega|)``; spins omitted means diagonal."""
    n = domain.dimension
    val = bessel_ratio(n / 2, fermi_momentum(domain, m) * _radii(y)) / (m * domain.volume)
    return val if s1 == s2 else np.zeros_like(val)


def limit_P_spin(domain, m, y):
    """``-Lambda_{n/2}(p_F |y|)^2 / (2 m |Omega|^2)``."""
    return -0.5 * m * limit_Q_spin(domain, m, y) ** 2


def _sin_cos_ratio(x):
    # (sin x - x cos x) / x^3 without cancellation near zero
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 0.05
    xs = x[small] ** 2
    out[small] = 1 / 3 - xs / 30 + xs**2 / 840 - xs**3 / 45360 + xs**4 / 3991680
    xl = x[~small]
    out[~small] = (np.sin(xl) - xl * np.cos(xl)) / xl**3
    return out


def wigner_seitz_hole(rho_bar, m, r):
    """Three-dimensional exchange hole ``-(rho^2 / 2m) [3 (sin k r - k r cos k r) / (k r)^3]^2``.

    ``k = (6 pi^2 rho_bar / m)^(1/3)`` is the Fermi momentum of density
    ``rho_bar`` spread over ``m`` spin states.
    """
    k = (6 * math.pi**2 * rho_bar / m) ** (1.0 / 3.0)
    return -0.5 * rho_bar**2 / m * (3 * _sin_cos_ratio(k * np.asarray(r, dtype=float))) ** 2


# remainder ------------------------------------------------------------------

def _shell_gram(basis, system, resolution=None):
    G = gram_matrix(basis, system.a_tilde, resolution)[system.a_N:, system.a_N:]
    return np.kron(G, np.eye(system.m))


def remainder_l2_squared(basis, system, resolution=None):
    """``||N^-1 R_N||^2`` in rescaled variables, equal to ``b_N / N``.

    Computed from the lattice Gram matrix of the partial shell, so the
    identity is exact up to round-off for analytic bases.
    """
    _check_system(basis, system)
    C = system.coupling_matrix
    G = _shell_gram(basis, system, resolution)
    return float(np.trace(C @ G @ C @ G)) / system.N


def remainder_difference_l2(basis, first, second, resolution=None):
    """``||N^-1 (R_N - R'_N)||`` for two fillings of the same partial shell."""
    if (first.N, first.m, first.a_N, first.a_tilde) != (second.N, second.m, second.a_N,
                                                         second.a_tilde):
        raise ValueError("fillings of different shells")
    _check_system(basis, first)
    D = first.coupling_matrix - second.coupling_matrix
    G = _shell_gram(basis, first, resolution)
    return math.sqrt(max(float(np.trace(D @ G @ D @ G)), 0.0) / first.N)


# exchange energy ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RadialLattice:
    """Spherical y-lattice: the origin, then radii ``j * spacing`` up to ``extent``.

    Directions are a Gauss-Legendre rule in ``cos theta`` times ``2 n_theta``
    uniform azimuths; ``direction_weights`` average over the sphere.
    """

    spacing: float
    extent: float
    n_theta: int = 8

    @property
    def dimension(self):
        return 3

    @property
    def radii(self):
        J = int(round(self.extent / self.spacing))
        return self.spacing * np.arange(1, J + 1)

    @property
    def radial_weights(self):
        w = np.full(len(self.radii), self.spacing)
        w[0] = w[-1] = self.spacing / 2
        return w

    @property
    def directions(self):
        ct, _ = np.polynomial.legendre.leggauss(self.n_theta)
        nphi = 2 * self.n_theta
        ph = 2 * np.pi * np.arange(nphi) / nphi
        st = np.sqrt(1 - ct**2)
        return np.stack([np.outer(st, np.cos(ph)).ravel(), np.outer(st, np.sin(ph)).ravel(),
                         np.repeat(ct, nphi)], 1)

    @property
    def direction_weights(self):
        _, wt = np.polynomial.legendre.leggauss(self.n_theta)
        return np.repeat(wt, 2 * self.n_theta) / (4 * self.n_theta)

    @property
    def points(self):
        shells = (self.radii[:, None, None] * self.directions[None]).reshape(-1, 3)
        return np.vstack([np.zeros((1, 3)), shells])


@dataclass(frozen=True)
class ExchangeResult:
    """``value`` excludes the tail; ``tail_bound`` bounds ``|y| > extent``."""

    value: float
    tail_bound: float
    ball_term: float
    extent: float


def exchange_energy(P, A=None, radial=None):
    """``E_x = int_A int P^S_N(x, y) / |y| dy dx`` on a radial lattice.

    ``P`` is a ``P_spin`` field sampled at ``radial.points`` (taken from the
    field's metadata when ``radial`` is omitted); the x integral
    uses ``P.x_weights`` (or a uniform rule of total mass ``|A|``).  The
    ball ``|y| < spacing`` contributes ``2 pi spacing^2 P(x, 0)``; beyond
    ``extent`` an envelope ``C r^-4`` fitted on the outer half of the radii
    bounds the remainder by ``2 pi C / R^2``.

    Raises
    ------
    DimensionUnsupported
        Outside three dimensions.
    TailBoundExceeded
        If the tail bound exceeds 1% of ``|E_x|``.
    """
    if P.kind != "P_spin":
        raise KindMismatch(f"exchange_energy needs a P_spin field, got {P.kind}")
    if P.x_samples.shape[1] != 3:
        raise DimensionUnsupported("the exchange energy is implemented for n = 3 only")
    radial = P.metadata.get("radial") if radial is None else radial
    if radial is None:
        raise ValueError("no radial lattice given")
    vals = np.asarray(P.values)
    if vals.shape[1] != len(radial.points):
        raise ValueError("field was not sampled on this radial lattice")
    if P.x_weights is not None:
        wx = np.asarray(P.x_weights)
    else:
        if A is None:
            raise ValueError("need x weights or the region A")
        lo, hi = _box_bounds(A)
        wx = np.full(len(vals), float(np.prod(hi - lo)) / len(vals))
    r, wr = radial.radii, radial.radial_weights
    profile = wx @ vals  # x-integrated P at every y point
    shells = profile[1:].reshape(len(r), -1) @ radial.direction_weights
    ball = 2 * math.pi * radial.spacing**2 * profile[0]
    value = float(np.sum(4 * math.pi * r * shells * wr) + ball)
    outer = r >= r[-1] / 2
    C = float(np.max(np.abs(shells[outer]) * r[outer] ** 4))
    tail = 2 * math.pi * C / r[-1] ** 2
    if tail > TAIL_FRACTION * abs(value) and tail > 0:
        raise TailBoundExceeded(f"tail bound {tail:.3g} exceeds 1% of |E_x| = {abs(value):.3g}")
    return ExchangeResult(value, float(tail), float(ball), float(r[-1]))


def _cos_integral(k, lo, hi):
    k = np.asarray(k, dtype=float)
    safe = np.where(k == 0, 1.0, k)
    return np.where(k == 0, hi - lo, (np.sin(safe * hi) - np.sin(safe * lo)) / safe)


def averaged_spin_pair_correlation(basis, system, A, radial, chunk=256):
    """``|A|^-1 int_A P^S_N(x, y) dx`` on a box basis, integrated exactly in x.

    Along each axis ``phi_a(x + t) phi_a(x - t) = L^-1 [cos(2 pi a t / L) -+
    cos(2 pi a x / L)]`` (Dirichlet / Neumann), so the x integral of a
    product of two such factors over ``A_i`` is a closed-form trigonometric
    expression.  Needs every ``x +- s y / 2`` to stay inside the box.
    """
    if basis.representation != "analytic":
        raise TypeError("exact x-averaging needs an analytic box basis")
    if not system.spin_diagonal:
        raise ValueError("exact x-averaging needs an ordered filling")
    _check_system(basis, system)
    lo, hi = _box_bounds(A)
    L = basis.lengths
    n = basis.dimension
    N = system.N
    s = N ** (-1.0 / n)
    Y = radial.points if isinstance(radial, RadialLattice) else np.atleast_2d(radial)
    reach = s * np.max(np.abs(Y)) / 2
    if np.any(lo - reach < -1e-12) or np.any(hi + reach > L + 1e-12):
        raise ValueError("x +- s y / 2 leaves the box; shrink the radial extent or A")
    sign = -1.0 if basis.bc == "dirichlet" else 1.0
    Ws = [_weight_tensor(basis, system.occupation(sp), 1.0) for sp in range(system.m)]
    J = [max(W.shape[i] for W in Ws) for i in range(n)]
    Ws = [np.pad(W, [(0, J[i] - W.shape[i]) for i in range(n)]) for W in Ws]
    Ms = []
    for i in range(n):
        j = np.arange(J[i])
        k = 2 * math.pi * j / L[i]
        I1 = _cos_integral(k, lo[i], hi[i])
        if basis.bc == "neumann":
            I1[0] = 0.0
        I2 = 0.5 * (_cos_integral(k[:, None] - k[None], lo[i], hi[i])
                    + _cos_integral(k[:, None] + k[None], lo[i], hi[i]))
        if basis.bc == "neumann":
            I2[0, :] = I2[:, 0] = 0.0
        Ms.append((k, I1, I2, hi[i] - lo[i]))
    out = np.empty(len(Y))
    for c in range(0, len(Y), chunk):
        yy = Y[c:c + chunk]
        mats = []
        for i, (k, I1, I2, ln) in enumerate(Ms):
            Cc = np.cos(np.outer(k, s * yy[:, i] / 2))
            M = (ln * Cc[:, None] * Cc[None] + sign * (Cc[:, None] * I1[None, :, None]
                                                      + Cc[None] * I1[:, None, None])
                 + I2[:, :, None]) / L[i] ** 2
            mats.append(M)
        tot = 0.0
        for W in Ws:
            V = np.broadcast_to(W, (len(yy),) + W.shape)
            for i in reversed(range(n)):
                # contract axis i of W against the first index of mats[i], batched over points
                Vt = np.moveaxis(V, i + 1, -1)
                shp = Vt.shape
                Vt = Vt.reshape(shp[0], -1, shp[-1]) @ np.moveaxis(mats[i], -1, 0)
                V = np.moveaxis(Vt.reshape(shp), -1, i + 1)
            tot = tot + np.sum(V * W[None], axis=tuple(range(1, n + 1)))
        out[c:c + chunk] = tot / N**2
    area = float(np.prod(hi - lo))
    vals = (-0.5 * out / area)[None]
    center = ((lo + hi) / 2)[None]
    md = {"basis": "analytic", "bc": basis.bc, "domain_hash": basis.domain.content_hash(),
          "averaged_over": (lo.tolist(), hi.tolist()), "filling": system.filling}
    if isinstance(radial, RadialLattice):
        md["radial"] = radial
    return CorrelationField("P_spin", N, center, vals, None, Y, system.m, np.array([area]), md)


# local density approximation --------------------------------------------------

def c_x(m):
    """``3 (3 / (32 pi m))^(1/3)``; ``m = 2`` gives the Dirac constant ``(3/4)(3/pi)^(1/3)``."""
    return 3.0 * (3.0 / (32.0 * math.pi * m)) ** (1.0 / 3.0)


def lda_exchange(rho, A=None, m=None):
    """``c_x(m) int_A rho^(4/3)``; the exchange energy tends to minus this quantity.

    Uses the field's quadrature weights when present; otherwise the samples
    inside the box ``A`` are weighted uniformly with total mass ``|A|``.

    Raises
    ------
    DimensionUnsupported
    """
    if rho.kind not in ("rho_spin", "rho"):
        raise KindMismatch(f"lda_exchange needs a density field, got {rho.kind}")
    if rho.x_samples.shape[1] != 3:
        raise DimensionUnsupported("c_x is the three-dimensional constant")
    m = rho.m if m is None else m
    vals = np.clip(np.asarray(rho.values, dtype=float), 0, None) ** (4.0 / 3.0)
    if rho.x_weights is not None:
        return float(c_x(m) * np.sum(rho.x_weights * vals))
    if A is None:
        raise ValueError("density field has no quadrature weights and no region was given")
    lo, hi = _box_bounds(A)
    inside = np.all((rho.x_samples >= lo) & (rho.x_samples <= hi), axis=1)
    if not inside.any():
        raise ValueError("no density samples inside A")
    return float(c_x(m) * np.prod(hi - lo) * vals[inside].mean())
