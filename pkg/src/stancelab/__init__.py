"""stancelab: active-learning stance classification and corpus-shift analytics."""

__version__ = "0.1.0"
