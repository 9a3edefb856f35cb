"""Foveated focal-point pyramids, focal-point CNN training, Siamese unification and merging."""

__version__ = "0.1.0"
