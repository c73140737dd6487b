"""Active-learning-for-object-detection sandbox."""

__version__ = "0.1.0"
