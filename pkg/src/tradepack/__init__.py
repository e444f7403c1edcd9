"""Detection and analysis of trade packages (split orders) in per-investor trade streams."""

__version__ = "0.1.0"
