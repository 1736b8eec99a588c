"""Bessel functions of small order, exact Gamma values and related closed forms.

Only the orders needed for dimensions two and three (plus their recurrence
neighbours) are supported:

* half-integer orders 1/2, 3/2, 5/2 use the elementary closed forms,
* integer orders 0, 1, 2 use Miller's backward recurrence normalised by
  ``J_0 + 2 sum_k J_2k = 1``,

with the ascending power series below ``r = 2`` for every order.
"""

import math

import numpy as np
from scipy import integrate

from .errors import ArgumentUnsupported, OrderUnsupported

SUPPORTED_ORDERS = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5)

# below this the two-term series is exact to double precision
SMALL_ARGUMENT = 1e-4
SERIES_LIMIT = 2.0


def gamma_fn(z):
    """Gamma function at integers and half-integers in [1/2, 6].

    >>> gamma_fn(3)
    2.0
    """
    twice = 2.0 * z
    k = int(round(twice))
    if abs(twice - k) > 1e-12 or not 1 <= k <= 12:
        raise ArgumentUnsupported(f"gamma_fn supports z in {{1/2, 1, ..., 6}}, got {z}")
    if k % 2 == 0:
        return float(math.factorial(k // 2 - 1))
    # Gamma(m + 1/2) = (2m)! / (4^m m!) sqrt(pi)
    m = (k - 1) // 2
    return math.factorial(2 * m) / (4**m * math.factorial(m)) * math.sqrt(math.pi)


def _check_order(nu):
    nu = float(nu)
    if nu not in SUPPORTED_ORDERS:
        raise OrderUnsupported(f"Bessel order {nu} not in {SUPPORTED_ORDERS}")
    return nu


def _series(nu, r, normalized):
    # sum_k (-1)^k (r/2)^(2k) / (k! (nu+1)_k), times (r/2)^nu / Gamma(nu+1) unless normalized
    q = -(0.5 * r) ** 2
    term = np.ones_like(r)
    total = np.ones_like(r)
    for k in range(1, 40):
        term = term * q / (k * (k + nu))
        total = total + term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    if normalized:
        return total
    return total * (0.5 * r) ** nu / gamma_fn(nu + 1.0)


def _half_integer(nu, r):
    s, c = np.sin(r), np.cos(r)
    pref = np.sqrt(2.0 / (np.pi * r))
    if nu == 0.5:
        return pref * s
    if nu == 1.5:
        return pref * (s / r - c)
    return pref * ((3.0 / r**2 - 1.0) * s - 3.0 * c / r)


def _miller(r):
    """Return (J0, J1, J2) at r >= 2 by normalised backward recurrence."""
    rmax = float(np.max(r))
    start = int(rmax + 12.0 * rmax ** (1.0 / 3.0) + 40)
    start += start % 2
    b_next = np.zeros_like(r)
    b = np.full_like(r, 1e-30)
    norm = np.zeros_like(r)
    j0 = j1 = j2 = None
    for k in range(start, 0, -1):
        b_prev = (2.0 * k / r) * b - b_next
        b_next, b = b, b_prev
        # b now holds the order k-1 value
        if (k - 1) % 2 == 0 and k - 1 > 0:
            norm += 2.0 * b
        if k - 1 == 2:
            j2 = b.copy()
        elif k - 1 == 1:
            j1 = b.copy()
        big = np.abs(b) > 1e250
        if np.any(big):
            scale = np.where(big, 1e-250, 1.0)
            b *= scale
            b_next *= scale
            norm *= scale
            if j2 is not None:
                j2 *= scale
            if j1 is not None:
                j1 *= scale
    j0 = b
    norm += j0
    return j0 / norm, j1 / norm, j2 / norm


def bessel_j(nu, r):
    """Bessel function of the first kind ``J_nu(r)`` for ``r >= 0``."""
    nu = _check_order(nu)
    r = np.asarray(r, dtype=float)
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    if np.any(r < 0):
        raise ValueError("bessel_j requires r >= 0")
    out = np.empty_like(r)
    small = r < SMALL_ARGUMENT
    mid = (~small) & (r < SERIES_LIMIT)
    large = r >= SERIES_LIMIT
    if np.any(small):
        rs = r[small]
        out[small] = (0.5 * rs) ** nu / gamma_fn(nu + 1.0) * (1.0 - (0.5 * rs) ** 2 / (nu + 1.0))
    if np.any(mid):
        out[mid] = _series(nu, r[mid], normalized=False)
    if np.any(large):
        rl = r[large]
        if nu in (0.5, 1.5, 2.5):
            out[large] = _half_integer(nu, rl)
        else:
            out[large] = _miller(rl)[int(nu)]
    return out[0] if scalar else out


def bessel_ratio(nu, r):
    """Normalised Bessel function ``Gamma(nu+1) (2/r)^nu J_nu(r)``, equal to 1 at r = 0.

    For ``nu = n/2`` this is the profile shared by every limit formula of the
    one-body matrix: ``2^{n/2} Gamma(n/2+1) J_{n/2}(r) / r^{n/2}``.
    """
    nu = _check_order(nu)
    r = np.abs(np.asarray(r, dtype=float))
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    out = np.empty_like(r)
    small = r < SMALL_ARGUMENT
    mid = (~small) & (r < SERIES_LIMIT)
    large = r >= SERIES_LIMIT
    out[small] = 1.0 - (0.5 * r[small]) ** 2 / (nu + 1.0)
    if np.any(mid):
        out[mid] = _series(nu, r[mid], normalized=True)
    if np.any(large):
        rl = r[large]
        out[large] = gamma_fn(nu + 1.0) * (2.0 / rl) ** nu * bessel_j(nu, rl)
    return out[0] if scalar else out


def ball_volume(n, radius=1.0):
    """Volume ``pi^{n/2} r^n / Gamma(n/2 + 1)`` of the n-ball."""
    return math.pi ** (n / 2) * radius**n / gamma_fn(n / 2 + 1)


def ball_indicator_hat(n, gamma, y):
    """Fourier transform of the indicator of the ball of radius ``gamma``.

    Convention ``F v(eta) = int exp(-i eta.x) v(x) dx``; ``y`` has shape
    ``(..., n)``.  The value at ``y = 0`` is the ball volume.
    """
    if n not in (2, 3):
        raise ArgumentUnsupported(f"ball_indicator_hat supports n in (2, 3), got {n}")
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != n:
        raise ValueError(f"y must have trailing dimension {n}")
    r = np.linalg.norm(y, axis=-1)
    return ball_volume(n, gamma) * bessel_ratio(n / 2, gamma * r)


def schafheitlin(n):
    """Closed form of ``int_0^inf r^-2 J_{n/2}(r)^2 dr = 4 / ((n^2 - 1) pi)``."""
    if n < 2:
        raise ArgumentUnsupported("schafheitlin requires n >= 2")
    return 4.0 / ((n * n - 1) * math.pi)


def schafheitlin_quadrature(n, cutoff=400.0):
    """Adaptive quadrature of the Schafheitlin integral.

    Returns ``(value, tail)`` where ``tail`` is the envelope estimate
    ``1/(2 pi R^2)`` of the part beyond ``cutoff`` (already included in
    ``value``), from ``J^2 ~ (2 / (pi r)) cos^2``.
    """
    nu = n / 2
    if nu not in SUPPORTED_ORDERS:
        raise OrderUnsupported(f"no Bessel order {nu} for n={n}")

    def f(r):
        if r == 0.0:
            return 0.0 if nu > 1 else 0.25  # limit of J_1(r)^2 / r^2
        return float(bessel_j(nu, r)) ** 2 / r**2

    head, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)
    edges = np.arange(1.0, cutoff + math.pi, math.pi)
    edges[-1] = cutoff
    body = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        part, _ = integrate.quad(f, lo, hi, epsabs=1e-15, epsrel=1e-13)
        body += part
    tail = 1.0 / (2.0 * math.pi * cutoff**2)
    return head + body + tail, tail
