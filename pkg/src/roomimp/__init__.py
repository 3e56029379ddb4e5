"""Bayesian identification of wall impedance from in-room pressure measurements."""

__version__ = "0.1.0"

from . import bayes, cli, fem, harness, linalg, mesh, rng  # noqa: F401
