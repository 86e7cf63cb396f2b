"""Recover component and state-machine views from source code and score them."""

__version__ = "0.1.0"
