"""Numerical laboratory for nonlinear nonlocal parabolic equations."""

__version__ = "0.1.0"
