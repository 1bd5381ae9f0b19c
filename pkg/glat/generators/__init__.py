"""Synthetic dataset generation."""

from glat.generators.synth_generator import synth_generate, write_dataset

__all__ = ["synth_generate", "write_dataset"]
