"""Arbitrary-scale single-image super-resolution with integrated positional encoding."""

__version__ = "0.1.0"
