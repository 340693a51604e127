"""Langevin drift/diffusion reconstruction, rolling regime tracking and change-point detection."""

__version__ = "0.1.0"
