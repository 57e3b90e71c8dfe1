"""Analytic infinite-width network kernels, function-space training dynamics,
and finite-width tangent-kernel experiments."""

__version__ = "0.1.0"
