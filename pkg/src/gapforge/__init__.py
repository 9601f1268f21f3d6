"""Generative adversarial parallelization on small MLPs, in numpy."""

__version__ = "0.1.0"
