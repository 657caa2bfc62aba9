"""Dispersive kernels of finite-rank perturbed higher-order Schrodinger operators."""

__version__ = "0.1.0"
