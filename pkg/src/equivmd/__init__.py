"""Multivariate equivalence tests on squared Mahalanobis distance."""

__version__ = "0.1.0"
