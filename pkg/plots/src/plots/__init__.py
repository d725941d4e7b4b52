"""Renders experiment CSVs into the five study figure types."""

__version__ = "0.1.0"
