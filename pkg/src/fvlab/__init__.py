"""Feature-visualization reliability lab."""
__version__ = "0.1.0"
