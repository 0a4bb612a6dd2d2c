"""Portfolio optimisation under a fast mean-reverting fractional OU factor."""

__version__ = "0.1.0"
