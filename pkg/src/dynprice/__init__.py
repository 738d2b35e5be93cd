"""Dynamic pricing with diffusion-process demand."""

__version__ = "0.1.0"
