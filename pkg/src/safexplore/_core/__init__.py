"""Numerical core: compiled bicycle kernels and their pure-Python twins."""
