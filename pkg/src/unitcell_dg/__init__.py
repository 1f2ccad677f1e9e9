"""Nodal discontinuous-Galerkin unit-cell solver for photoconductive devices."""

__version__ = "0.1.0"
