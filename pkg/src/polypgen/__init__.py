"""Desk-scale inpainting-diffusion image synthesis with retrieval-based mask proposals."""

__version__ = "0.1.0"
