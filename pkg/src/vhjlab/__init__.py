"""Numerics for u_t - u_xx = |u_x|^p on (0, 1) with zero boundary data, p > 2."""

__version__ = "0.1.0"
