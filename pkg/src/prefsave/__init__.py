"""Optimal savings with Markov-modulated risk aversion."""

__version__ = "0.1.0"
