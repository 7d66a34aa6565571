"""Entailment-based option selection: pairwise, contextualized, and parallel
scoring over a small from-scratch transformer, with bi-encoder retrieval."""

__version__ = "0.1.0"

from .errors import (DataError, EntselError, GraphError, LayoutError,
                     NumericError, ShapeError)
from .pairing import OptionSpace, SelectionInstance

__all__ = ["DataError", "EntselError", "GraphError", "LayoutError",
           "NumericError", "ShapeError", "OptionSpace", "SelectionInstance",
           "__version__"]
