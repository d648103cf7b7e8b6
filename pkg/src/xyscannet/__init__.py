"""Slice-and-scan state-space deblurring network on a NumPy autodiff core."""

__version__ = "0.1.0"
