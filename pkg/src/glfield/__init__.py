"""Ginzburg-Landau energies with non-uniform applied magnetic fields."""

__version__ = "0.1.0"
