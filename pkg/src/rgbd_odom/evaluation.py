"""Synthetic-scene oracle, trajectory integration, and covariance validation.

The synthetic generator replaces a motion-capture experiment: landmarks with
known descriptors are projected through a ground-truth camera trajectory,
optionally perturbed with the sensor noise law, and fed to the pipeline
either as feature sets or as rendered textured frames. Because ground truth
is exact, relative-motion errors come from pose differencing rather than
noisy differentiation, and covariance quality is measured by sigma-coverage
fractions and NEES against the 6-DoF reference value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .camera import CameraIntrinsics, NoiseModel, RgbdFrame, noise_sigma_array, project_array
from .errors import TimestampMismatch
from .features import FeatureSet
from .geometry import (
    RigidTransform,
    compose,
    invert,
    rotation_geodesic_distance,
    transform_of_vector,
    twist_vector_of,
)
from .pipeline import InMemorySequence, OdometryEstimate


@dataclass
class Trajectory:
    timestamps: np.ndarray  # (n,), strictly increasing
    poses: list  # list[RigidTransform], camera-to-world

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        if len(self.poses) != self.timestamps.size:
            raise ValueError("timestamp/pose count mismatch")
        if self.timestamps.size > 1 and not (np.diff(self.timestamps) > 0).all():
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def save_tum(self, path):
        with open(path, "w") as f:
            for t, pose in zip(self.timestamps, self.poses):
                q = Rotation.from_matrix(pose.rotation).as_quat()  # x, y, z, w
                vals = [t, *pose.translation, *q]
                f.write(" ".join(repr(float(v)) for v in vals) + "\n")

    @staticmethod
    def load_tum(path) -> "Trajectory":
        ts, poses = [], []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                vals = [float(v) for v in line.split()]
                if len(vals) != 8:
                    raise ValueError(f"bad trajectory line: {line!r}")
                ts.append(vals[0])
                R = Rotation.from_quat(vals[4:8]).as_matrix()
                poses.append(RigidTransform(R, np.array(vals[1:4])))
        return Trajectory(np.array(ts), poses)


@dataclass(frozen=True)
class SynthConfig:
    n_landmarks: int = 300
    center: tuple = (0.0, 0.0, 2.0)  # scene box center, camera frame at t=0
    extent: tuple = (2.5, 2.0, 1.0)  # box edge lengths, meters
    trajectory: str = "static"  # static | line | orbit
    speed: float = 0.0  # m/frame for line, rad/frame for orbit
    n_frames: int = 10
    frame_rate: float = 30.0
    noise: bool = True
    outlier_rate: float = 0.0  # fraction of landmarks in confusable pairs
    n_bits: int = 256
    mode: str = "features"  # features | frames
    texture_cell: int = 4  # frames mode: pixel size of texture blocks
    seed: int = 0

    def __post_init__(self):
        if self.n_landmarks < 0 or self.n_frames < 0:
            raise ValueError("counts must be non-negative")
        if not (0.0 <= self.outlier_rate <= 1.0):
            raise ValueError("outlier_rate must lie in [0, 1]")
        if self.trajectory not in ("static", "line", "orbit"):
            raise ValueError(f"unknown trajectory {self.trajectory!r}")
        if self.mode not in ("features", "frames"):
            raise ValueError(f"unknown mode {self.mode!r}")


def _gt_poses(cfg: SynthConfig):
    poses = []
    for i in range(cfg.n_frames):
        if cfg.trajectory == "static" or cfg.speed == 0.0:
            poses.append(RigidTransform.identity())
        elif cfg.trajectory == "line":
            poses.append(RigidTransform(np.eye(3), np.array([cfg.speed * i, 0.0, 0.0])))
        else:  # orbit about the scene center, rotating around the y axis
            c = np.asarray(cfg.center, dtype=float)
            th = cfg.speed * i
            R = Rotation.from_euler("y", th).as_matrix()
            t = c - R @ c
            poses.append(RigidTransform(R, t))
    return poses


def synth_scene(cfg: SynthConfig, k: CameraIntrinsics, noise_model: NoiseModel = NoiseModel()):
    """Synthetic dataset + exact ground-truth trajectory.

    features mode: one FeatureSet per frame, landmarks projected through the
    ground-truth pose, measurement noise applied per the sensor law (the
    noisy 3D point is re-projected, so the stored (x, y, Z) back-projects to
    exactly the noise-perturbed point). Confusable outliers are landmark
    pairs sharing one descriptor whose members alternate visibility with
    frame parity, which turns them into gross 3D mismatches between
    consecutive frames.

    frames mode: renders blocky-textured views of a plane for the built-in
    detector path.

    Returns (InMemorySequence, Trajectory).
    """
    rng = np.random.default_rng(cfg.seed)
    poses = _gt_poses(cfg)
    timestamps = np.arange(cfg.n_frames) / cfg.frame_rate
    if cfg.mode == "frames":
        items = _render_frames(cfg, k, poses, timestamps, noise_model, rng)
        return InMemorySequence(items, k, noise_model), Trajectory(timestamps, poses)

    c = np.asarray(cfg.center, dtype=float)
    ext = np.asarray(cfg.extent, dtype=float)
    landmarks = c + (rng.random((cfg.n_landmarks, 3)) - 0.5) * ext
    descriptors = rng.integers(0, 256, size=(cfg.n_landmarks, cfg.n_bits // 8)).astype(np.uint8)

    # confusable pairs: (2i, 2i+1) within the chosen subset share a descriptor;
    # the first member appears on even frames, the second on odd frames
    n_conf = int(round(cfg.outlier_rate * cfg.n_landmarks)) // 2 * 2
    conf = rng.choice(cfg.n_landmarks, size=n_conf, replace=False) if n_conf else np.array([], dtype=int)
    parity = np.full(cfg.n_landmarks, -1)  # -1: always visible
    for a, b in zip(conf[0::2], conf[1::2]):
        descriptors[b] = descriptors[a]
        parity[a] = 0
        parity[b] = 1

    margin = k.border_margin
    z_min, z_max = k.depth_range
    items = []
    for i, pose in enumerate(poses):
        cam = invert(pose)
        pc = cam.apply(landmarks)
        vis = (parity == -1) | (parity == i % 2)
        vis &= (pc[:, 2] >= z_min) & (pc[:, 2] <= z_max)
        xs, ys = project_array(pc, k)
        vis &= (xs >= margin) & (xs < k.width - margin) & (ys >= margin) & (ys < k.height - margin)
        idx = np.nonzero(vis)[0]
        p = pc[idx]
        xs, ys = xs[idx], ys[idx]
        if cfg.noise:
            sig = noise_sigma_array(xs, ys, p[:, 2], k, noise_model)
            p = p + rng.normal(size=p.shape) * sig
            keep = p[:, 2] > 0
            idx, p = idx[keep], p[keep]
            xs, ys = project_array(p, k)
            inb = (xs >= 0) & (xs < k.width) & (ys >= 0) & (ys < k.height)
            inb &= (p[:, 2] >= z_min) & (p[:, 2] <= z_max)
            idx, p, xs, ys = idx[inb], p[inb], xs[inb], ys[inb]
        items.append(
            FeatureSet(
                frame_index=i,
                xy=np.stack([xs, ys], axis=1),
                depth=p[:, 2].copy(),
                response=np.zeros(idx.size),
                kind="binary",
                descriptors=descriptors[idx].copy(),
                timestamp=float(timestamps[i]),
            )
        )
    return InMemorySequence(items, k, noise_model), Trajectory(timestamps, poses)


def _render_frames(cfg, k, poses, timestamps, noise_model, rng):
    """Blocky-textured plane at the scene-center depth, viewed from each pose."""
    z0 = float(cfg.center[2])
    cell_m = 0.02 * cfg.texture_cell  # texture block edge in meters on the plane
    tex = rng.integers(0, 256, size=(512, 512)).astype(np.uint8)

    xs, ys = np.meshgrid(np.arange(k.width, dtype=float), np.arange(k.height, dtype=float))
    dirs = np.stack([(xs - k.cx) / k.fx, (ys - k.cy) / k.fy, np.ones_like(xs)], axis=-1)

    items = []
    for i, pose in enumerate(poses):
        o = pose.translation
        d = dirs @ pose.rotation.T
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (z0 - o[2]) / d[..., 2]
        w = o + s[..., None] * d
        u = np.floor(w[..., 0] / cell_m).astype(int) % tex.shape[1]
        v = np.floor(w[..., 1] / cell_m).astype(int) % tex.shape[0]
        img = tex[v, u]
        depth = s.copy()  # camera-frame Z of the hit point
        bad = ~np.isfinite(depth) | (depth <= 0)
        if cfg.noise:
            depth = depth + rng.normal(size=depth.shape) * noise_model.sigma_z(depth)
        depth[bad] = np.nan
        items.append(
            RgbdFrame(intensity=img, depth=depth, timestamp=float(timestamps[i]), index=i)
        )
    return items


def integrate_trajectory(estimates, initial: RigidTransform = None) -> Trajectory:
    """Chain relative estimates into absolute poses.

    Failed estimates propagate the previous pose; the affected frame index
    is recorded on the returned trajectory's `gaps` attribute.
    """
    if not estimates:
        raise ValueError("no estimates to integrate")
    pose = initial if initial is not None else RigidTransform.identity()
    ts = [estimates[0].t_a]
    poses = [pose]
    gaps = []
    for est in estimates:
        if est.ok:
            pose = compose(pose, transform_of_vector(est.xi))
        else:
            gaps.append(est.frame_b)
        ts.append(est.t_b)
        poses.append(pose)
    traj = Trajectory(np.array(ts), poses)
    traj.gaps = gaps
    return traj


@dataclass
class ComparisonResult:
    pair_indices: np.ndarray  # (m, 2) frame index pairs with ok estimates
    twist_errors: np.ndarray  # (m, 6) estimated minus ground-truth relative twist
    gt_twists: np.ndarray  # (m, 6)
    position_errors: np.ndarray  # (n, 3) absolute, per trajectory sample
    orientation_errors: np.ndarray  # (n,) geodesic angle, radians


def _associate(ts_query, ts_ref, max_dt):
    if len(ts_ref) == 1:
        best = np.zeros(len(ts_query), dtype=int)
        return best, np.abs(ts_query - ts_ref[0]) <= max_dt
    idx = np.searchsorted(ts_ref, ts_query)
    idx = np.clip(idx, 1, len(ts_ref) - 1)
    left = idx - 1
    choose_left = np.abs(ts_query - ts_ref[left]) <= np.abs(ts_query - ts_ref[idx])
    best = np.where(choose_left, left, idx)
    ok = np.abs(ts_query - ts_ref[best]) <= max_dt
    return best, ok


def compare(estimates, traj: Trajectory, gt: Trajectory, frame_period=None) -> ComparisonResult:
    """Relative-twist errors for ok estimates plus absolute pose errors.

    Ground-truth relative twists come from differencing gt poses at the
    timestamps associated to each estimate (nearest neighbor within half a
    frame period).
    """
    if frame_period is None:
        frame_period = float(np.median(np.diff(gt.timestamps))) if len(gt) > 1 else 1.0
    max_dt = frame_period / 2.0

    ok_est = [e for e in estimates if e.ok]
    failed = 0
    pair_idx, errs, gts = [], [], []
    for e in ok_est:
        (ia,), oka = _associate(np.array([e.t_a]), gt.timestamps, max_dt)
        (ib,), okb = _associate(np.array([e.t_b]), gt.timestamps, max_dt)
        if not (oka[0] and okb[0]):
            failed += 1
            continue
        rel = compose(invert(gt.poses[ia]), gt.poses[ib])
        gt_xi = twist_vector_of(rel)
        pair_idx.append((e.frame_a, e.frame_b))
        errs.append(e.xi - gt_xi)
        gts.append(gt_xi)
    if ok_est and failed > 0.1 * len(ok_est):
        raise TimestampMismatch(f"{failed}/{len(ok_est)} estimates unassociated")

    best, okm = _associate(traj.timestamps, gt.timestamps, max_dt)
    if (~okm).sum() > 0.1 * len(traj.timestamps):
        raise TimestampMismatch("trajectory/ground-truth association failed")
    pos_err, ang_err = [], []
    for i, (j, good) in enumerate(zip(best, okm)):
        if not good:
            pos_err.append([np.nan] * 3)
            ang_err.append(np.nan)
            continue
        pos_err.append(traj.poses[i].translation - gt.poses[j].translation)
        ang_err.append(rotation_geodesic_distance(traj.poses[i].rotation, gt.poses[j].rotation))

    return ComparisonResult(
        pair_indices=np.array(pair_idx).reshape(-1, 2),
        twist_errors=np.array(errs).reshape(-1, 6),
        gt_twists=np.array(gts).reshape(-1, 6),
        position_errors=np.array(pos_err).reshape(-1, 3),
        orientation_errors=np.array(ang_err),
    )


AXIS_NAMES = ["tx", "ty", "tz", "wx", "wy", "wz"]


@dataclass
class CoverageReport:
    n_samples: int
    multiplier: float
    # fraction of |e_axis| < k * sqrt(Sigma_axis,axis), keyed "raw"/"scaled"
    per_axis: dict = field(default_factory=dict)  # {"raw": {k: (6,) array}, ...}
    nees_mean: float = 0.0
    nees_percentiles: dict = field(default_factory=dict)
    n_singular: int = 0
    spike_flags: np.ndarray = None  # per-sample: translation-trace outlier

    def to_dict(self):
        return {
            "n_samples": self.n_samples,
            "multiplier": self.multiplier,
            "per_axis": {
                scale: {
                    str(kk): {a: float(v) for a, v in zip(AXIS_NAMES, vals)}
                    for kk, vals in ks.items()
                }
                for scale, ks in self.per_axis.items()
            },
            "nees_mean": self.nees_mean,
            "nees_percentiles": self.nees_percentiles,
            "n_singular": self.n_singular,
            "n_spikes": int(self.spike_flags.sum()) if self.spike_flags is not None else 0,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def coverage(errors, covariances, multiplier=9.0, k_values=(1, 2, 3)) -> CoverageReport:
    """Sigma-coverage and NEES of twist errors against reported covariances.

    errors: (m, 6); covariances: sequence of (6, 6) raw Sigma-hat matrices.
    NEES uses the raw covariance regularized by 1e-12 I; samples whose
    covariance is still numerically singular are counted and excluded.
    """
    errors = np.asarray(errors, dtype=float).reshape(-1, 6)
    covs = [np.asarray(c, dtype=float) for c in covariances]
    if len(covs) != errors.shape[0]:
        raise ValueError("errors and covariances must have equal length")
    m = errors.shape[0]

    diag = np.array([np.diag(c) for c in covs]).reshape(-1, 6)
    report = CoverageReport(n_samples=m, multiplier=multiplier)
    for scale_name, factor in (("raw", 1.0), ("scaled", multiplier)):
        per_k = {}
        sd = np.sqrt(np.maximum(diag * factor, 0.0))
        for kk in k_values:
            with np.errstate(invalid="ignore"):
                inside = np.abs(errors) < kk * sd
            per_k[kk] = inside.mean(axis=0) if m else np.zeros(6)
        report.per_axis[scale_name] = per_k

    nees = []
    singular = 0
    for e, c in zip(errors, covs):
        creg = c + 1e-12 * np.eye(6)
        try:
            sol = np.linalg.solve(creg, e)
        except np.linalg.LinAlgError:
            singular += 1
            continue
        val = float(e @ sol)
        if not np.isfinite(val):
            singular += 1
            continue
        nees.append(val)
    nees = np.array(nees)
    report.n_singular = singular
    if nees.size:
        report.nees_mean = float(nees.mean())
        report.nees_percentiles = {
            str(q): float(np.percentile(nees, q)) for q in (5, 25, 50, 75, 95)
        }

    # covariance spikes: translation-block trace far above the sequence median
    tr = diag[:, :3].sum(axis=1)
    med = np.median(tr) if m else 0.0
    report.spike_flags = tr > 10.0 * med if m else np.zeros(0, dtype=bool)
    return report


def write_error_csv(path, cmp_result: ComparisonResult):
    """Per-pair twist-error series for plotting."""
    with open(path, "w") as f:
        f.write("frame_a,frame_b," + ",".join(f"err_{a}" for a in AXIS_NAMES) + "\n")
        for (fa, fb), e in zip(cmp_result.pair_indices, cmp_result.twist_errors):
            f.write(f"{fa},{fb}," + ",".join(repr(float(v)) for v in e) + "\n")
