"""Plan and render normal-field-of-view hyperlapses from 360-degree video."""

__version__ = "0.1.0"
