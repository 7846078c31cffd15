"""Top-down dependency-tree decoding for neural machine translation."""

__version__ = "0.1.0"
