"""Design and evaluation toolkit for interactive linear coding over Gaussian two-way channels."""

__version__ = "0.1.0"
