"""Spectral Galerkin laboratory for damped wave and Klein-Gordon operators."""

__version__ = "0.1.0"
