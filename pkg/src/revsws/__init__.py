"""Shear wave speed estimation from reverberant wave fields."""

__version__ = "0.1.0"
