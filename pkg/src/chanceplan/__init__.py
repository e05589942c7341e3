"""Risk-aware reachability-based trajectory planning."""

__version__ = "0.1.0"
