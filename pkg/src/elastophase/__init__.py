"""Diffuse- and sharp-interface energies for hyperelastic multiphase solids."""

__version__ = "0.1.0"
