"""Projection finite-difference solver for 3D incompressible Navier-Stokes flow."""

__version__ = "0.1.0"
