"""Generative joint source-channel coding for wireless image transmission."""

__version__ = "0.1.0"
