"""Numerical laboratory for non-self-adjoint 1D operators."""
__version__ = "0.1.0"
