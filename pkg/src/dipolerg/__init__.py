"""Spectral-renormalization engine for the dispersion of a field-coupled dipole."""

__version__ = "0.1.0"
