"""Target speaker separation toolkit for studying enrollment speaker embeddings."""

__version__ = "0.1.0"
