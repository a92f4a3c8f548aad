"""Discrete soft actor-critic with exact tabular oracles for bias diagnostics."""

__version__ = "0.1.0"
