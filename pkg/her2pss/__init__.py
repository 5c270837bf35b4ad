"""HER2 scoring of tissue-microarray cores with Pyramid Sampling Sets."""

__version__ = "0.1.0"
