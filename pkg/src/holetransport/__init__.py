"""Adiabatic transport of a hole between three moving traps holding two atoms."""

__version__ = "0.1.0"
