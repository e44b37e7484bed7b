"""Disparity-to-depth conversion, ROI distance, resolution analysis,
point-cloud export."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calib import StereoRig

__all__ = [
    "Roi",
    "NoValidPixelsError",
    "disparity_to_depth",
    "roi_average_disparity",
    "roi_distance",
    "depth_resolution",
    "reproject_to_cloud",
    "cloud_to_text",
]


class NoValidPixelsError(ValueError):
    """The ROI contains no finite disparity pixel."""


@dataclass(frozen=True)
class Roi:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"empty roi {self}")

    def check_inside(self, width: int, height: int) -> None:
        if self.x < 0 or self.y < 0 or self.x + self.w > width or self.y + self.h > height:
            raise ValueError(f"roi {self} outside {width}x{height} image")


def _reproject(rig: StereoRig, x, y, d):
    """Apply the 4x4 reprojection matrix; returns (X, Y, Z) with NaN where W <= 0."""
    Q = rig.Q
    vec = np.stack([x, y, d, np.ones_like(np.asarray(x, dtype=np.float64))])
    X, Y, Z, W = Q @ vec.reshape(4, -1)
    with np.errstate(invalid="ignore", divide="ignore"):
        good = np.isfinite(W) & (W > 0)
        out = np.where(good, np.stack([X, Y, Z]) / np.where(good, W, 1.0), np.nan)
    return out.reshape((3,) + np.shape(x))


def disparity_to_depth(disp: np.ndarray, rig: StereoRig) -> np.ndarray:
    """Z in meters per pixel; NaN where disparity is invalid or behind the rig.

    For coincident principal points this reduces to Z = fx * baseline / d.
    """
    h, w = disp.shape
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    d = disp.astype(np.float64)
    xyz = _reproject(rig, xs, ys, d)
    z = xyz[2]
    z[~np.isfinite(d)] = np.nan
    z[z <= 0] = np.nan
    return z.astype(np.float32)


def roi_average_disparity(disp: np.ndarray, roi: Roi) -> float:
    """Arithmetic mean of the finite disparities inside the ROI (NaN if none)."""
    roi.check_inside(disp.shape[1], disp.shape[0])
    patch = disp[roi.y : roi.y + roi.h, roi.x : roi.x + roi.w]
    finite = patch[np.isfinite(patch)]
    if finite.size == 0:
        return float("nan")
    return float(finite.mean())


def roi_distance(disp: np.ndarray, roi: Roi, rig: StereoRig) -> float:
    """Distance in meters to the ROI: mean disparity reprojected at the ROI center."""
    mean_d = roi_average_disparity(disp, roi)
    if not np.isfinite(mean_d):
        raise NoValidPixelsError(f"no valid pixels in roi {roi}")
    cx = roi.x + (roi.w - 1) / 2.0
    cy = roi.y + (roi.h - 1) / 2.0
    z = float(_reproject(rig, np.float64(cx), np.float64(cy), np.float64(mean_d))[2])
    if not np.isfinite(z) or z <= 0:
        raise NoValidPixelsError(f"roi disparity {mean_d} reprojects behind the rig")
    return z


def depth_resolution(z: float, rig: StereoRig) -> float:
    """Depth change per disparity pixel at range z: dZ = Z^2 / (f * baseline)."""
    if z <= 0:
        raise ValueError(f"z must be positive, got {z}")
    f = rig.P_left[0, 0]
    return z * z / (f * rig.baseline_m)


def reproject_to_cloud(disp: np.ndarray, rig: StereoRig) -> np.ndarray:
    """(N, 3) points in meters, one per finite pixel, in row-major pixel order."""
    h, w = disp.shape
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    xyz = _reproject(rig, xs, ys, disp.astype(np.float64))
    pts = xyz.reshape(3, -1).T
    keep = np.isfinite(disp.ravel()) & np.all(np.isfinite(pts), axis=1)
    return pts[keep]


def cloud_to_text(points: np.ndarray) -> str:
    lines = [f"# points {len(points)}"]
    lines.extend(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}" for p in points)
    return "\n".join(lines) + "\n"
