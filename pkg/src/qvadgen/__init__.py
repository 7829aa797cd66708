"""Query-variant ad text generation with a PMI association word graph."""

__version__ = "0.1.0"
