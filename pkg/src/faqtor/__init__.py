"""Factored-action Q-function decomposition and offline RL toolkit."""

__version__ = "0.1.0"
