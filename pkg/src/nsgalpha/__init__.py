"""Generalized-alpha time integration of incompressible Navier-Stokes on smooth spline spaces."""

__version__ = "0.1.0"
