"""Pinhole depth back-projection and the quadratic depth-noise law.

Back-projection follows
    X = (x + dx - cx) Z / fx,   Y = (y + dy - cy) Z / fy,   Z = Z
with (dx, dy) an optional per-pixel distortion shift (zero for the
"standard" sensor). Depth noise is Gaussian with sigma_Z = kappa * Z^2,
kappa = |disparity_slope| * sigma_disparity, and the lateral sigmas scale
with the normalized pixel offset from the principal point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import BehindCamera, InvalidDepth, OutOfBounds

# shift function signature: (x, y) -> (dx, dy), vectorized over arrays
ShiftFn = Callable[[np.ndarray, np.ndarray], tuple]


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    shift: Optional[ShiftFn] = None  # None means identically zero
    depth_range: tuple = (0.3, 6.0)
    border_margin: int = 16

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        z_min, z_max = self.depth_range
        if not (0 < z_min < z_max):
            raise ValueError("depth range must satisfy 0 < z_min < z_max")

    def shift_at(self, x, y):
        if self.shift is None:
            x = np.asarray(x, dtype=float)
            return np.zeros_like(x), np.zeros_like(x)
        return self.shift(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


@dataclass(frozen=True)
class ShiftTable:
    """Per-pixel distortion shift from a precomputed lookup table.

    Nearest-pixel lookup; tables come from an .npz with float arrays
    'dx' and 'dy' of shape (height, width).
    """

    dx: np.ndarray
    dy: np.ndarray

    @staticmethod
    def load(path) -> "ShiftTable":
        data = np.load(path)
        return ShiftTable(np.asarray(data["dx"], dtype=float), np.asarray(data["dy"], dtype=float))

    def __call__(self, x, y):
        h, w = self.dx.shape
        xi = np.clip(np.rint(np.asarray(x)).astype(int), 0, w - 1)
        yi = np.clip(np.rint(np.asarray(y)).astype(int), 0, h - 1)
        return self.dx[yi, xi], self.dy[yi, xi]


@dataclass(frozen=True)
class NoiseModel:
    """Quadratic depth-noise law sigma_Z = kappa * Z^2.

    kappa defaults to |disparity_slope| * sigma_disparity; passing kappa
    explicitly overrides the derived value.
    """

    sigma_disparity: float = 0.5
    disparity_slope: float = -2.85e-3
    kappa_override: Optional[float] = None

    @property
    def kappa(self) -> float:
        if self.kappa_override is not None:
            return self.kappa_override
        return abs(self.disparity_slope) * self.sigma_disparity

    def sigma_z(self, z):
        return self.kappa * np.square(np.asarray(z, dtype=float))


@dataclass
class RgbdFrame:
    """One registered intensity + depth image pair.

    depth is float meters; non-positive or NaN entries are invalid. The
    validity mask additionally enforces the intrinsics depth range.
    """

    intensity: np.ndarray
    depth: np.ndarray
    timestamp: float = 0.0
    index: int = 0
    valid: np.ndarray = None

    def __post_init__(self):
        if self.intensity.ndim == 3:  # RGB -> grayscale, rec601 luma
            self.intensity = np.round(
                self.intensity[..., 0] * 0.299
                + self.intensity[..., 1] * 0.587
                + self.intensity[..., 2] * 0.114
            ).astype(np.uint8)
        if self.intensity.shape != self.depth.shape:
            raise ValueError("intensity and depth dimensions differ")

    def validity_mask(self, k: CameraIntrinsics) -> np.ndarray:
        if self.valid is not None:
            return self.valid
        z_min, z_max = k.depth_range
        with np.errstate(invalid="ignore"):
            mask = np.isfinite(self.depth) & (self.depth >= z_min) & (self.depth <= z_max)
        return mask


def _check_pixel(x, y, k: CameraIntrinsics):
    if not (0 <= x < k.width and 0 <= y < k.height):
        raise OutOfBounds(f"pixel ({x}, {y}) outside {k.width}x{k.height} image")


def _check_depth(z, k: CameraIntrinsics):
    z_min, z_max = k.depth_range
    if not (np.isfinite(z) and z_min <= z <= z_max):
        raise InvalidDepth(f"depth {z} outside [{z_min}, {z_max}]")


def back_project(x, y, z, k: CameraIntrinsics) -> np.ndarray:
    """Pixel + depth -> 3D camera-frame point (meters)."""
    _check_pixel(x, y, k)
    _check_depth(z, k)
    dx, dy = k.shift_at(x, y)
    return np.array(
        [(x + dx - k.cx) * z / k.fx, (y + dy - k.cy) * z / k.fy, z], dtype=float
    )


def back_project_array(xs, ys, zs, k: CameraIntrinsics) -> np.ndarray:
    """Vectorized back-projection; no range checks (callers pre-filter)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    zs = np.asarray(zs, dtype=float)
    dx, dy = k.shift_at(xs, ys)
    return np.stack(
        [(xs + dx - k.cx) * zs / k.fx, (ys + dy - k.cy) * zs / k.fy, zs], axis=-1
    )


def project(p, k: CameraIntrinsics):
    """3D camera-frame point -> pixel (x, y). Inverse of back_project for
    the zero-shift sensor; with a shift table it is exact only where the
    table is locally constant."""
    p = np.asarray(p, dtype=float)
    if p[2] <= 0:
        raise BehindCamera(f"Z = {p[2]} is not in front of the camera")
    x = k.fx * p[0] / p[2] + k.cx
    y = k.fy * p[1] / p[2] + k.cy
    dx, dy = k.shift_at(np.clip(x, 0, k.width - 1), np.clip(y, 0, k.height - 1))
    return float(x - dx), float(y - dy)


def project_array(points, k: CameraIntrinsics):
    """Vectorized projection; returns (xs, ys). Assumes Z > 0 (no shift)."""
    p = np.asarray(points, dtype=float)
    xs = k.fx * p[..., 0] / p[..., 2] + k.cx
    ys = k.fy * p[..., 1] / p[..., 2] + k.cy
    if k.shift is not None:
        dx, dy = k.shift_at(np.clip(xs, 0, k.width - 1), np.clip(ys, 0, k.height - 1))
        xs, ys = xs - dx, ys - dy
    return xs, ys


def noise_sigma(x, y, z, k: CameraIntrinsics, n: NoiseModel) -> np.ndarray:
    """Per-axis measurement std-devs (magnitudes) for a pixel + depth."""
    _check_pixel(x, y, k)
    _check_depth(z, k)
    dx, dy = k.shift_at(x, y)
    sz = n.kappa * z * z
    return np.array(
        [abs(x + dx - k.cx) / k.fx * sz, abs(y + dy - k.cy) / k.fy * sz, sz], dtype=float
    )


def noise_sigma_array(xs, ys, zs, k: CameraIntrinsics, n: NoiseModel) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    zs = np.asarray(zs, dtype=float)
    dx, dy = k.shift_at(xs, ys)
    sz = n.kappa * np.square(zs)
    return np.stack(
        [np.abs(xs + dx - k.cx) / k.fx * sz, np.abs(ys + dy - k.cy) / k.fy * sz, sz],
        axis=-1,
    )


def reconstruct_cloud(frame: RgbdFrame, k: CameraIntrinsics, pixels, noise: NoiseModel = None):
    """Back-project a list of (x, y) pixels from a frame's depth image.

    Returns (points (n,3), sigmas (n,3), rejected) where rejected lists the
    input indices whose depth was invalid; kept points preserve input order.
    """
    noise = noise or NoiseModel()
    mask = frame.validity_mask(k)
    points, sigmas, rejected = [], [], []
    for i, (x, y) in enumerate(pixels):
        xi, yi = int(round(x)), int(round(y))
        _check_pixel(xi, yi, k)
        if not mask[yi, xi]:
            rejected.append(i)
            continue
        z = float(frame.depth[yi, xi])
        points.append(back_project(x, y, z, k))
        sigmas.append(noise_sigma(x, y, z, k, noise))
    points = np.array(points, dtype=float).reshape(-1, 3)
    sigmas = np.array(sigmas, dtype=float).reshape(-1, 3)
    return points, sigmas, rejected
