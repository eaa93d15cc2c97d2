"""Desk-scale NMT toolkit with a word-embedding regression regularizer."""

__version__ = "0.1.0"
