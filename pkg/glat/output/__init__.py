"""Output builders for heatmaps and CSV reports."""

from glat.output.heatmap_builder import HeatmapBuilder, heatmap_export
from glat.output.report_builder import ReportBuilder

__all__ = ["HeatmapBuilder", "heatmap_export", "ReportBuilder"]
