"""Contrastive regularisation of feature embeddings for CTR prediction."""

__version__ = "0.1.0"
