"""Dual-route 3-d segmentation toolkit: state-space encoder, gated
convolutions, multi-scale fusion decoder, and a training service."""

__version__ = "0.1.0"
