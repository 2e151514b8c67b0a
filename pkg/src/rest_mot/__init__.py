"""Online multi-camera multi-object tracking with reconfigurable spatial/temporal graphs."""

__version__ = "0.1.0"
