"""Meshfree monotone finite differences for non-divergence elliptic equations."""
__version__ = "0.1.0"
