"""Discontinuous Galerkin solver for poroelastic-acoustic wave propagation."""

__version__ = "0.1.0"
