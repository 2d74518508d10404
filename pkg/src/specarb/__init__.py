"""Deep Q-learning statistical arbitrage engine."""

__version__ = "0.1.0"
