"""Core module for DP block-g variable selection."""

__version__ = "1.0.0"
