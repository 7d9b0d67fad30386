"""Dataset ingestion: manifest, intrinsics file, and raster IO.

Manifest format (text, '#' comments):
    intrinsics <path>
    <timestamp> <intensity_path> <depth_path>     # frame entry
    <timestamp> <feature_path>                    # or feature-file entry

Depth rasters are 16-bit PNG/PGM in millimeters (0 = invalid), converted
to meters on read; intensity rasters are 8-bit PNG/PGM. All paths are
resolved relative to the manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import CameraIntrinsics, NoiseModel, RgbdFrame, ShiftTable
from .errors import BadRasterFormat, DatasetError, ManifestError, MissingFile
from .features import load_features


def load_intrinsics(path):
    """Intrinsics JSON -> (CameraIntrinsics, NoiseModel).

    Keys: fx, fy, cx, cy, width, height; optional kappa, sigma_disparity,
    disparity_slope, border_margin, z_min, z_max, shift_table.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"cannot read intrinsics {path}: {e}") from None
    try:
        shift = None
        if raw.get("shift_table"):
            shift = ShiftTable.load(path.parent / raw["shift_table"])
        k = CameraIntrinsics(
            fx=float(raw["fx"]),
            fy=float(raw["fy"]),
            cx=float(raw["cx"]),
            cy=float(raw["cy"]),
            width=int(raw["width"]),
            height=int(raw["height"]),
            shift=shift,
            depth_range=(float(raw.get("z_min", 0.3)), float(raw.get("z_max", 6.0))),
            border_margin=int(raw.get("border_margin", 16)),
        )
    except (KeyError, ValueError, TypeError) as e:
        raise ManifestError(f"bad intrinsics {path}: {e}") from None
    noise = NoiseModel(
        sigma_disparity=float(raw.get("sigma_disparity", 0.5)),
        disparity_slope=float(raw.get("disparity_slope", -2.85e-3)),
        kappa_override=float(raw["kappa"]) if "kappa" in raw else None,
    )
    return k, noise


def save_intrinsics(path, k: CameraIntrinsics, noise: NoiseModel = NoiseModel()):
    rec = {
        "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
        "width": k.width, "height": k.height,
        "z_min": k.depth_range[0], "z_max": k.depth_range[1],
        "border_margin": k.border_margin,
        "sigma_disparity": noise.sigma_disparity,
        "disparity_slope": noise.disparity_slope,
    }
    if noise.kappa_override is not None:
        rec["kappa"] = noise.kappa_override
    Path(path).write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")


def read_intensity(path) -> np.ndarray:
    try:
        img = Image.open(path)
        arr = np.asarray(img)
    except OSError as e:
        raise BadRasterFormat(f"{path}: {e}") from None
    if arr.ndim == 3:
        return arr  # RgbdFrame converts to grayscale
    if arr.dtype != np.uint8:
        raise BadRasterFormat(f"{path}: intensity raster must be 8-bit")
    return arr


def read_depth_m(path) -> np.ndarray:
    """16-bit millimeter raster -> float meters; 0 becomes NaN."""
    try:
        img = Image.open(path)
        arr = np.asarray(img)
    except OSError as e:
        raise BadRasterFormat(f"{path}: {e}") from None
    if arr.dtype not in (np.uint16, np.int32):  # Pillow reads 16-bit PNG as I;16 or I
        raise BadRasterFormat(f"{path}: depth raster must be 16-bit, got {arr.dtype}")
    depth = arr.astype(float) / 1000.0
    depth[arr == 0] = np.nan
    return depth


def write_depth_mm(path, depth_m: np.ndarray):
    mm = np.where(np.isfinite(depth_m), np.round(depth_m * 1000.0), 0.0)
    Image.fromarray(np.clip(mm, 0, 65535).astype(np.uint16)).save(path)


def write_intensity(path, img: np.ndarray):
    Image.fromarray(img.astype(np.uint8)).save(path)


@dataclass
class FrameEntry:
    timestamp: float
    intensity_path: Path
    depth_path: Path = None  # None marks a feature-file entry

    @property
    def is_features(self):
        return self.depth_path is None


class Dataset:
    """Validated dataset handle; loads frames or feature sets lazily."""

    def __init__(self, root, entries, intrinsics, noise, groundtruth_path=None):
        self.root = Path(root)
        self.entries = entries
        self.intrinsics = intrinsics
        self.noise = noise
        self.groundtruth_path = groundtruth_path

    def __len__(self):
        return len(self.entries)

    def load(self, i):
        e = self.entries[i]
        try:
            if e.is_features:
                return load_features(e.intensity_path, frame_index=i, timestamp=e.timestamp)
            frame = RgbdFrame(
                intensity=read_intensity(e.intensity_path),
                depth=read_depth_m(e.depth_path),
                timestamp=e.timestamp,
                index=i,
            )
        except DatasetError:
            raise
        except Exception as ex:
            raise DatasetError(f"frame {i}: {ex}") from ex
        return frame


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise MissingFile(str(manifest_path))
    root = manifest_path.parent

    intrinsics_path = None
    entries = []
    for ln, line in enumerate(manifest_path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "intrinsics":
            if len(parts) != 2:
                raise ManifestError(f"{manifest_path}:{ln}: bad intrinsics line")
            intrinsics_path = root / parts[1]
            continue
        try:
            ts = float(parts[0])
        except ValueError:
            raise ManifestError(f"{manifest_path}:{ln}: bad timestamp {parts[0]!r}") from None
        if len(parts) == 2:
            entries.append(FrameEntry(ts, root / parts[1]))
        elif len(parts) == 3:
            entries.append(FrameEntry(ts, root / parts[1], root / parts[2]))
        else:
            raise ManifestError(f"{manifest_path}:{ln}: expected 2 or 3 fields")

    if intrinsics_path is None:
        raise ManifestError(f"{manifest_path}: missing 'intrinsics' header line")
    if not intrinsics_path.exists():
        raise MissingFile(str(intrinsics_path))
    for e in entries:
        if not e.intensity_path.exists():
            raise MissingFile(str(e.intensity_path))
        if e.depth_path is not None and not e.depth_path.exists():
            raise MissingFile(str(e.depth_path))
    if any(b.timestamp <= a.timestamp for a, b in zip(entries, entries[1:])):
        raise ManifestError(f"{manifest_path}: entries must be sorted by timestamp")

    k, noise = load_intrinsics(intrinsics_path)
    gt = root / "groundtruth.txt"
    return Dataset(root, entries, k, noise, gt if gt.exists() else None)
