"""Global Weyl-law diagnostics."""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange, InsufficientSpectrum, LambdaBeyondComputed
from .special import ball_volume, gamma_fn


@dataclass(frozen=True)
class WeylConstants:
    gamma: float
    volume: float
    dimension: int

    @property
    def phase_space_mass(self):
        """``(2 pi)^-n |Omega x B_gamma|``, equal to one by construction."""
        return self.volume * ball_volume(self.dimension, self.gamma) / (2 * math.pi) ** self.dimension


def gamma_from_volume(volume, n):
    return 2.0 * math.sqrt(math.pi) * gamma_fn(n / 2 + 1) ** (1.0 / n) / volume ** (1.0 / n)


def gamma(domain):
    """Rescaled Fermi radius ``2 sqrt(pi) Gamma(n/2+1)^(1/n) / |Omega|^(1/n)``.

    >>> from fermiweyl.geometry import DomainSpec
    >>> round(gamma(DomainSpec.unit_square()), 7)
    3.5449077
    """
    return gamma_from_volume(domain.volume, domain.dimension)


def weyl_constants(domain):
    return WeylConstants(gamma(domain), domain.volume, domain.dimension)


def fermi_momentum(domain, m):
    """``p_F = gamma * m^(-1/n)``."""
    if m < 1:
        raise ValueError("spin multiplicity m must be >= 1")
    return gamma(domain) * m ** (-1.0 / domain.dimension)


def counting(basis, lam):
    """Number of computed eigenvalues ``<= lam``."""
    ev = basis.eigenvalues
    if len(ev) == 0:
        raise InsufficientSpectrum("empty basis")
    if lam > ev[-1]:
        raise LambdaBeyondComputed(f"lambda={lam} beyond the largest computed eigenvalue {ev[-1]}")
    # tolerate round-off in degenerate clusters
    return int(np.searchsorted(ev, lam * (1 + 1e-12) + 1e-300, side="right"))


def weyl_ratio(basis, k):
    """``gamma * k^(1/n) * lambda_k^(-1/2)``, tending to one by Weyl's law."""
    ks = np.atleast_1d(np.asarray(k))
    if ks.min() < 1 or ks.max() > basis.K:
        raise IndexOutOfRange(f"k must lie in 1..{basis.K}")
    n = basis.dimension
    lam = basis.eigenvalues[ks - 1]
    with np.errstate(divide="ignore"):
        r = gamma(basis.domain) * ks ** (1.0 / n) / np.sqrt(lam)
    return float(r[0]) if np.ndim(k) == 0 else r


def semiclassical_scales(basis):
    """``h_k = lambda_k^(-1/2)`` (infinite for a zero eigenvalue)."""
    with np.errstate(divide="ignore"):
        return 1.0 / np.sqrt(basis.eigenvalues)


def counting_slope(basis, decades=1.0):
    """Least-squares slope of ``log N(lambda)`` vs ``log lambda`` over the top decade(s).

    The counting function is sampled at the computed eigenvalues themselves
    (right endpoint of each degenerate cluster).
    """
    ev = basis.eigenvalues
    if len(ev) < 2:
        raise InsufficientSpectrum("need at least two eigenvalues for a slope")
    lam_top = ev[-1]
    sel = (ev > 0) & (ev >= lam_top / 10**decades)
    lam = ev[sel]
    counts = np.searchsorted(ev, lam * (1 + 1e-12), side="right")
    lam, idx = np.unique(lam, return_index=True)
    counts = counts[idx]
    if len(lam) < 2:
        raise InsufficientSpectrum("too few distinct eigenvalues in the fitting window")
    slope, _ = np.polyfit(np.log(lam), np.log(counts), 1)
    return float(slope)


def write_weyl_csv(basis, path):
    """CSV with columns ``k, lambda_k, h_k, weyl_ratio``."""
    ks = np.arange(1, basis.K + 1)
    h = semiclassical_scales(basis)
    ratio = weyl_ratio(basis, ks)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "lambda_k", "h_k", "weyl_ratio"])
        for row in zip(ks, basis.eigenvalues, h, ratio):
            w.writerow([int(row[0])] + ["%.17g" % v for v in row[1:]])
