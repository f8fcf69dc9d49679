"""Physical learning machines: thermal and photonic perceptrons."""

__version__ = "0.1.0"
