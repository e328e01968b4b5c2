"""Egocentric object-search stack: scenes, sensing, POMDP, SAC+CURL, replanning."""

__version__ = "0.1.0"
