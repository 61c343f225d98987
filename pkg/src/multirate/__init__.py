"""Multirate heat/wave coupling: solvers, DWR error estimation, adaptivity."""

__version__ = "0.1.0"
