"""Fractional Stefan problems in one space dimension."""

__version__ = "0.1.0"
