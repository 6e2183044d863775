"""Lipschitz certificates for feed-forward convolutional network graphs."""

__version__ = "0.1.0"
