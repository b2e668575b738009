"""Topology of flux surfaces in a perturbed zero-helicity vortex."""

__version__ = "0.1.0"
