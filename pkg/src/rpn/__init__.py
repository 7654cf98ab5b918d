"""Scalable learned image compression with cross-resolution residual priors."""

__version__ = "0.1.0"
