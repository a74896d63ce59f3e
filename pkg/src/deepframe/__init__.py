"""Deep frame prediction for block-based video coding."""

__version__ = "0.1.0"
