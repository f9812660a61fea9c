"""Reach-avoid certificate synthesis for polynomial control systems."""
__version__ = "0.1.0"
