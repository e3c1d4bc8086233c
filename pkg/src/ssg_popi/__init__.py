"""Solvers for two-player general-sum stochastic Stackelberg games."""

__version__ = "0.1.0"
