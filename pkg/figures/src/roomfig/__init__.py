"""Figures for the wall-impedance identification studies."""

__version__ = "0.1.0"

from .jobs import FigureJob, JobError, fit_loglog_slope  # noqa: F401
from .render import render  # noqa: F401
