"""Variational graph autoencoders for synthetic distribution-grid topologies."""

__version__ = "0.1.0"
