"""Bayesian comparison of option-pricing models from asset moves and call surfaces."""

__version__ = "0.1.0"
