"""Bag-of-acoustic-words dementia screening from speech segment features."""

__version__ = "0.1.0"
