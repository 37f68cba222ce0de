"""Empirical best prediction, bootstrap simultaneous intervals and max-type
tests for small area Poisson-gamma and logit-normal mixed models."""

__version__ = "0.1.0"
