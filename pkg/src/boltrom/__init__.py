"""Reduced-order model of bolt loosening in a pair of coupled oscillators."""

__version__ = "0.1.0"
