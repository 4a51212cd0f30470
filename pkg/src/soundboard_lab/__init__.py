"""Soundboard simulation laboratory: orthotropic plate FDTD, decay and
brightness metrics, and static string-load analysis."""

__version__ = "0.1.0"
