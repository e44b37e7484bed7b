"""Stereo vision pipeline: calibration, rectification, semi-global matching,
depth estimation, and an interactive parameter-tuning service."""

__version__ = "0.1.0"

from . import calib, depth, image, sgm, target

__all__ = ["calib", "depth", "image", "sgm", "target", "__version__"]
