"""Multi-granularity glyph-text alignment for zero-shot character recognition."""

__version__ = "0.1.0"
