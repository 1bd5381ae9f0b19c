"""Readers and writers for embedding tables, datasets and checkpoints."""

from glat.parsers.embedding_table import (
    load_embedding_table,
    save_embedding_table,
    validate_patch_grid,
)

__all__ = ["load_embedding_table", "save_embedding_table", "validate_patch_grid"]
