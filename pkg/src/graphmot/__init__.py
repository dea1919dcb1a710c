"""Online multi-view multi-object tracking on dynamic spatiotemporal graphs."""

__version__ = "0.1.0"
