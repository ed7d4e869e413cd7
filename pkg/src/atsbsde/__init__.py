"""Explicit adapted-time-step solver for monotone polynomial-growth BSDEs."""

__version__ = "0.1.0"
