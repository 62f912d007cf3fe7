"""Weakly supervised multi-granularity denoising for sequential recommendation."""

__version__ = "0.1.0"
