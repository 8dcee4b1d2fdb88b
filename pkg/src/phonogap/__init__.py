"""Low-frequency band gaps of high-contrast elastic phononic crystals."""

__version__ = "0.1.0"
