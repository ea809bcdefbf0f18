"""Error exponents of almost-fixed-length channel codes and hypothesis tests."""

__version__ = "0.1.0"
