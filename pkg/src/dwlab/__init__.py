"""Depth/width task-complexity lab for single-agent vs multi-agent debate systems."""

__version__ = "0.1.0"
