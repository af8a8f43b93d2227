"""Intrinsic and extrinsic Matérn Gaussian processes on discretized manifolds."""

__version__ = "0.1.0"
