"""Generative occupancy-map synthesis for robotic exploration."""

__version__ = "0.1.0"
