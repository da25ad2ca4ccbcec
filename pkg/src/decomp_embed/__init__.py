"""Trainable decomposed embedding layers and post-training embedding compressors."""

__version__ = "0.1.0"
