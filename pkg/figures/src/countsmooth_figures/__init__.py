"""Render countsmooth benchmark CSVs as publication-style figures.

Reads only the documented CSV schemas (aggregate risk/regret tables and the
per-symbol smoothing table) and never recomputes statistics: the benchmark
CSVs are the single source of truth.
"""

from .plots import PlotError, plot_regret, plot_risk, plot_smoothing

__all__ = ["PlotError", "plot_risk", "plot_regret", "plot_smoothing"]
__version__ = "0.1.0"
