"""Real-time predictive V2X network digital twin."""

__version__ = "0.1.0"
