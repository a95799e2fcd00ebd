"""Evidence-grounded medical question answering with uncertainty and bias checks."""

__version__ = "0.1.0"
