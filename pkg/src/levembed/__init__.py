"""Learned DNA read embeddings whose distances approximate edit distance."""
__version__ = "0.1.0"
