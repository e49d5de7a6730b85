"""Conditional diffusion for camouflaged object detection on degraded images,
with a frozen Leader rectifying a Follower's internal distributions."""

__version__ = "0.1.0"
