"""Hyperbolic motion of closed plane curves in central force fields.

Desk-scale numerical laboratory: pseudospectral geometry on a periodic
chart, velocity-Verlet time stepping, conservation diagnostics, the
linearized (weakly hyperbolic) operator and a Nash-Moser style iteration.
"""

from hypercurve.errors import ConfigurationError, DegeneracyError, NumericalError

__version__ = "0.1.0"

__all__ = ["ConfigurationError", "DegeneracyError", "NumericalError", "__version__"]
