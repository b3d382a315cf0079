"""Multi-state dual CNN energy disaggregation."""

__version__ = "0.1.0"
