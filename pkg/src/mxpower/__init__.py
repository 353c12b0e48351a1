"""Conditional independence testing with model-X covariates: the CRT, the
moment-based MX(2) tests, knockoff p-values and their power theory."""

__version__ = "0.1.0"
