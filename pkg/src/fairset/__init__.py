"""fairset: rank cross-split near-duplicates, review them, emit a cleaned test set."""

__version__ = "0.1.0"
