"""Patch selection, graph construction, attention and evaluation metrics."""

from glat.analyzers.attention import gla_attention, msa_baseline
from glat.analyzers.graph import adjacency_gaussian, build_bundle, laplacian
from glat.analyzers.irm import IterativeRefiner, irm_run, random_selection
from glat.analyzers.metrics import auc_metric, kappa_metric, metrics_report

__all__ = [
    "IterativeRefiner",
    "irm_run",
    "random_selection",
    "adjacency_gaussian",
    "build_bundle",
    "laplacian",
    "gla_attention",
    "msa_baseline",
    "auc_metric",
    "kappa_metric",
    "metrics_report",
]
