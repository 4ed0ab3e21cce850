"""Posterior-sampling and optimistic learners for tabular constrained MDPs."""

__version__ = "0.1.0"
