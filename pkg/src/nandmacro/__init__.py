"""Circuit macro-model of a vertical NAND flash cell array."""

__version__ = "0.1.0"
