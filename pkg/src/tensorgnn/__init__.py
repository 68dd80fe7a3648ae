"""Graph learning with concatenated vs tensor-product structural encodings."""

__version__ = "0.1.0"
