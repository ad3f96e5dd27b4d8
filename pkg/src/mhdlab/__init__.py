"""Numerical laboratory for free-boundary compressible resistive MHD in
Lagrangian coordinates."""

__version__ = "0.1.0"
