"""Multiwell rigidity toolkit: well algebra, affine registration and grid-field experiments."""

__version__ = "0.1.0"
FORMAT_VERSION = 1
