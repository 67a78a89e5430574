"""Figure rendering for ritzlab run records."""

from .render import PLOT_KINDS, SchemaError, read_table, render

__all__ = ["PLOT_KINDS", "SchemaError", "read_table", "render"]
