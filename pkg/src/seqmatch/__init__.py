"""Few-shot video matching with sequence-aware adapters and unbalanced transport."""

__version__ = "0.1.0"
