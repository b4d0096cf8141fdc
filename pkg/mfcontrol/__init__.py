"""Controllability analysis, control synthesis and verification for linear mean-field SDEs."""

__version__ = "0.1.0"
