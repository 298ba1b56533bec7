"""Photometric-geometric LiDAR-inertial odometry."""

__version__ = "0.1.0"
