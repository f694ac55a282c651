"""Fully convolutional on/off state monitoring of single loads from aggregate power."""

__version__ = "0.1.0"
