"""GLAT - Graph Laplacian attention with iterative patch selection for slide grading."""

__version__ = "0.1.0"
