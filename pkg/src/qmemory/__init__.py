"""Single-qubit memory analysis: noise spectra, dynamical decoupling,
process tomography, coherence metrics and decay fitting."""

from .errors import ConvergenceError, PhysicalityError

__all__ = ["ConvergenceError", "PhysicalityError"]
__version__ = "0.1.0"
