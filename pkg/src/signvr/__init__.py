"""Sign-based variance-reduced optimization with 1-bit majority-vote distributed variants."""

__version__ = "0.1.0"
