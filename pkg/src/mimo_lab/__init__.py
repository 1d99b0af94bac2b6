"""Transceiver design and evaluation for MIMO-BICM links over real bidiagonal channels."""

__version__ = "0.1.0"
