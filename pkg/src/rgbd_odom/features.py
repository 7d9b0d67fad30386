"""Sparse keypoint detection, binary description, and feature-file IO.

The built-in detector is a 16-pixel-circle segment test (threshold 20,
contiguous arc of 9) with non-max suppression on a sum-of-absolute-
differences response. The built-in descriptor is 256 pseudo-random
intensity-pair comparisons on a 5x5-box-smoothed 31x31 patch; the pair
pattern is generated once from PATTERN_SEED so descriptors are stable
across runs and releases. Neither is rotation invariant: frame-to-frame
rotations at sensor rates are small.

Precomputed descriptors (e.g. from an external ORB run) can be ingested
through load_features; the CSV format is documented in the README.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .camera import CameraIntrinsics, RgbdFrame
from .errors import MixedKind, ParseError

PATTERN_SEED = 71519  # published constant; changing it invalidates stored descriptors

_CIRCLE = np.array(
    [
        (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
        (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
    ]
)  # (dx, dy) Bresenham circle of radius 3


@dataclass(frozen=True)
class DetectorConfig:
    threshold: int = 20
    arc_length: int = 9
    nms_radius: int = 4
    max_features: int = 1000


@dataclass(frozen=True)
class DescriptorConfig:
    patch_radius: int = 16  # keypoints closer than this to the border are dropped
    smoothing: int = 5
    n_bits: int = 256


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    response: float
    depth: float


@dataclass
class FeatureSet:
    """Keypoints plus descriptors for one frame, stored as parallel arrays.

    kind is "binary" (descriptors: (n, n_bits/8) uint8) or "real"
    (descriptors: (n, d) float).
    """

    frame_index: int
    xy: np.ndarray  # (n, 2) sub-pixel positions
    depth: np.ndarray  # (n,) meters
    response: np.ndarray  # (n,)
    kind: str
    descriptors: np.ndarray
    timestamp: float = 0.0

    def __len__(self):
        return self.xy.shape[0]

    @property
    def n_bits(self):
        return self.descriptors.shape[1] * 8 if self.kind == "binary" else None

    def keypoints(self):
        return [
            Keypoint(float(x), float(y), float(r), float(d))
            for (x, y), r, d in zip(self.xy, self.response, self.depth)
        ]

    @staticmethod
    def empty(kind="binary", length=256, frame_index=0, timestamp=0.0):
        if kind == "binary":
            desc = np.zeros((0, length // 8), dtype=np.uint8)
        else:
            desc = np.zeros((0, length), dtype=float)
        return FeatureSet(
            frame_index, np.zeros((0, 2)), np.zeros(0), np.zeros(0), kind, desc, timestamp
        )


def _sample_depth(depth, mask, ys, xs):
    """Depth at each keypoint: the pixel itself, else the nearest valid
    neighbor within a 1-px radius, else NaN."""
    h, w = depth.shape
    out = np.full(len(xs), np.nan)
    direct = mask[ys, xs]
    out[direct] = depth[ys[direct], xs[direct]]
    missing = np.where(~direct)[0]
    for i in missing:
        y0, y1 = max(ys[i] - 1, 0), min(ys[i] + 2, h)
        x0, x1 = max(xs[i] - 1, 0), min(xs[i] + 2, w)
        patch_m = mask[y0:y1, x0:x1]
        if patch_m.any():
            out[i] = depth[y0:y1, x0:x1][patch_m][0]
    return out


def _arc_table(arc_length):
    """65536-entry table: does a 16-bit circle mask contain a contiguous
    (circular) run of arc_length set bits?"""
    codes = np.arange(1 << 16, dtype=np.uint32)
    bits = ((codes[:, None] >> np.arange(16)[None, :]) & 1).astype(bool)
    doubled = np.concatenate([bits, bits[:, : arc_length - 1]], axis=1)
    run = doubled[:, :16].copy()
    for j in range(1, arc_length):
        run &= doubled[:, j : j + 16]
    return run.any(axis=1)


_ARC_TABLE_CACHE = {}


def detect(frame: RgbdFrame, k: CameraIntrinsics, cfg: DetectorConfig = DetectorConfig()):
    """Segment-test corners, strongest first, capped at cfg.max_features.

    Keypoints over invalid depth or inside the border margin are discarded.
    Deterministic: ties in response break on (y, x).
    """
    table = _ARC_TABLE_CACHE.get(cfg.arc_length)
    if table is None:
        table = _ARC_TABLE_CACHE[cfg.arc_length] = _arc_table(cfg.arc_length)

    img = frame.intensity.astype(np.int16)
    h, w = img.shape
    r = 3
    center = img[r : h - r, r : w - r]
    hi = center + cfg.threshold
    lo = center - cfg.threshold

    code_b = np.zeros(center.shape, dtype=np.uint16)
    code_d = np.zeros(center.shape, dtype=np.uint16)
    for i, (dx, dy) in enumerate(_CIRCLE):
        shifted = img[r + dy : h - r + dy, r + dx : w - r + dx]
        code_b |= (shifted > hi).astype(np.uint16) << i
        code_d |= (shifted < lo).astype(np.uint16) << i
    corner = table[code_b] | table[code_d]

    # SAD response, computed only at corner candidates
    cy, cx = np.nonzero(corner)
    resp_sparse = np.zeros(cy.size)
    cv = center[cy, cx].astype(np.int32)
    for dx, dy in _CIRCLE:
        d = np.abs(img[cy + r + dy, cx + r + dx].astype(np.int32) - cv) - cfg.threshold
        np.maximum(d, 0, out=d)
        resp_sparse += d

    full = np.zeros((h, w))
    full[cy + r, cx + r] = resp_sparse

    # non-max suppression: keep local maxima over a (2R+1) square
    size = 2 * cfg.nms_radius + 1
    local_max = ndimage.maximum_filter(full, size=size, mode="constant")
    keep = (full > 0) & (full >= local_max)
    ys, xs = np.nonzero(keep)

    m = max(k.border_margin, r)
    inside = (xs >= m) & (xs < w - m) & (ys >= m) & (ys < h - m)
    ys, xs = ys[inside], xs[inside]

    mask = frame.validity_mask(k)
    depths = _sample_depth(frame.depth, mask, ys, xs)
    ok = np.isfinite(depths)
    ys, xs, depths = ys[ok], xs[ok], depths[ok]
    resp = full[ys, xs]

    order = np.lexsort((xs, ys, -resp))[: cfg.max_features]
    return [
        Keypoint(float(xs[i]), float(ys[i]), float(resp[i]), float(depths[i]))
        for i in order
    ]


def _pair_pattern(cfg: DescriptorConfig):
    rng = np.random.default_rng(PATTERN_SEED)
    r = cfg.patch_radius - 1  # sample strictly inside the patch
    pts = rng.integers(-r, r + 1, size=(cfg.n_bits, 4))
    return pts  # columns: ax, ay, bx, by


def describe(
    frame: RgbdFrame,
    keypoints,
    cfg: DescriptorConfig = DescriptorConfig(),
    frame_index=None,
) -> FeatureSet:
    """Binary descriptors from smoothed pairwise intensity comparisons.

    Keypoints whose descriptor patch would leave the image are dropped;
    order is otherwise preserved.
    """
    h, w = frame.intensity.shape
    rb = cfg.patch_radius
    kept = [
        kp for kp in keypoints if rb <= kp.x < w - rb and rb <= kp.y < h - rb
    ]
    idx = frame.index if frame_index is None else frame_index
    if not kept:
        fs = FeatureSet.empty("binary", cfg.n_bits, idx, frame.timestamp)
        return fs

    smoothed = ndimage.uniform_filter(
        frame.intensity.astype(np.float32), size=cfg.smoothing, mode="nearest"
    )
    pat = _pair_pattern(cfg)
    xs = np.rint([kp.x for kp in kept]).astype(int)
    ys = np.rint([kp.y for kp in kept]).astype(int)
    a = smoothed[ys[:, None] + pat[:, 1], xs[:, None] + pat[:, 0]]
    b = smoothed[ys[:, None] + pat[:, 3], xs[:, None] + pat[:, 2]]
    bits = (a > b).astype(np.uint8)
    desc = np.packbits(bits, axis=1)

    return FeatureSet(
        frame_index=idx,
        xy=np.array([[kp.x, kp.y] for kp in kept]),
        depth=np.array([kp.depth for kp in kept]),
        response=np.array([kp.response for kp in kept]),
        kind="binary",
        descriptors=desc,
        timestamp=frame.timestamp,
    )


def extract(frame, k, det_cfg=DetectorConfig(), desc_cfg=DescriptorConfig()):
    """detect + describe in one call."""
    return describe(frame, detect(frame, k, det_cfg), desc_cfg)


def load_features(path, frame_index=0, timestamp=0.0) -> FeatureSet:
    """Read a feature CSV: header "binary <bits>" or "real <dims>", then
    rows "x, y, depth_m, payload"."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError("empty feature file", line=1)
    header = lines[0].split()
    if len(header) != 2 or header[0] not in ("binary", "real"):
        raise ParseError(f"bad header {lines[0]!r}", line=1)
    kind = header[0]
    try:
        length = int(header[1])
    except ValueError:
        raise ParseError(f"bad length in header {lines[0]!r}", line=1) from None

    xy, depth, payloads = [], [], []
    for ln, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise ParseError(f"expected 4 fields, got {len(parts)}", line=ln)
        try:
            xy.append((float(parts[0]), float(parts[1])))
            depth.append(float(parts[2]))
        except ValueError:
            raise ParseError("bad numeric field", line=ln) from None
        if kind == "binary":
            hx = parts[3]
            if len(hx) != length // 4:
                raise MixedKind(
                    f"payload has {len(hx)} hex chars, expected {length // 4}", line=ln
                )
            try:
                payloads.append(np.frombuffer(bytes.fromhex(hx), dtype=np.uint8))
            except ValueError:
                raise ParseError("bad hex payload", line=ln) from None
        else:
            vals = parts[3].split(";")
            if len(vals) != length:
                raise MixedKind(
                    f"payload has {len(vals)} dims, expected {length}", line=ln
                )
            try:
                payloads.append(np.array([float(v) for v in vals]))
            except ValueError:
                raise ParseError("bad real payload", line=ln) from None

    if not payloads:
        return FeatureSet.empty(kind, length, frame_index, timestamp)
    desc = np.stack(payloads)
    return FeatureSet(
        frame_index=frame_index,
        xy=np.array(xy, dtype=float),
        depth=np.array(depth, dtype=float),
        response=np.zeros(len(xy)),
        kind=kind,
        descriptors=desc,
        timestamp=timestamp,
    )


def save_features(fs: FeatureSet, path):
    length = fs.n_bits if fs.kind == "binary" else fs.descriptors.shape[1]
    with open(path, "w") as f:
        f.write(f"{fs.kind} {length}\n")
        for (x, y), d, desc in zip(fs.xy, fs.depth, fs.descriptors):
            if fs.kind == "binary":
                payload = desc.tobytes().hex()
            else:
                payload = ";".join(repr(float(v)) for v in desc)
            f.write(f"{float(x)!r}, {float(y)!r}, {float(d)!r}, {payload}\n")
