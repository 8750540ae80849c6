"""Reconstruct readings at uncovered sensor locations from a fixed subset
of sensors with a small feed-forward network trained by Rprop, BFGS or an
Rprop-then-BFGS schedule."""

__version__ = "0.1.0"
