"""Continuous severity scores from models trained on ordinal labels."""

__version__ = "0.1.0"
