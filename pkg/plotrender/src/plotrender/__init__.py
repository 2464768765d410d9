"""Presentation layer for convergence CSV files: log-log plots with slope
triangles.  Never recomputes errors."""

from .render import PlotError, PlotSpec, SlopeTriangle, load_series, render

__all__ = ["PlotSpec", "SlopeTriangle", "PlotError", "load_series", "render"]
