"""Numerical companion for local Weyl laws and free Fermi gas correlations.

Modules: :mod:`geometry`, :mod:`spectral`, :mod:`weyl`, :mod:`quantization`,
:mod:`correlation`, :mod:`fermi`, :mod:`special` and the batch front end
:mod:`cli`.
"""

__version__ = "0.1.0"

from .errors import ConfigError, FermiWeylError, NumericError  # noqa: E402
from .geometry import DomainSpec  # noqa: E402
from .spectral import EigenBasis, analytic_basis_box  # noqa: E402

__all__ = ["ConfigError", "DomainSpec", "EigenBasis", "FermiWeylError", "NumericError",
           "analytic_basis_box", "__version__"]
