"""Edge-assisted SLAM offloading: tile importance, adaptive encoding and safe scheduling."""

__version__ = "0.1.0"
