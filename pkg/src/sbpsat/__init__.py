"""Multidimensional SBP-SAT discretizations of diffusion on triangles."""

__version__ = "0.1.0"
