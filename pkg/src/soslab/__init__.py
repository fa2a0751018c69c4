"""Constrained solid-on-solid interface dynamics toolkit."""

from .catalog import PotentialCatalog, PotentialShape, load_catalog, zero_catalog
from .model import AUXILIARY, CONSTRAINED, ModelParams

__version__ = "0.1.0"

__all__ = [
    "AUXILIARY",
    "CONSTRAINED",
    "ModelParams",
    "PotentialCatalog",
    "PotentialShape",
    "load_catalog",
    "zero_catalog",
    "__version__",
]
