"""Model-independent price bounds with dynamically traded options."""

__version__ = "0.1.0"
