"""CSV-to-figure rendering for splitalloc outputs."""

from .render import PlotJob, SchemaError, build_figure, pivot_heatmap, render

__all__ = ["PlotJob", "SchemaError", "build_figure", "pivot_heatmap", "render"]
