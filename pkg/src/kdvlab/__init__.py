"""Truncated-scale numerics for para-differential normal forms of perturbed KdV."""

__version__ = "0.1.0"
