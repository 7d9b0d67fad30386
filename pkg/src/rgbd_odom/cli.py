"""Command-line surface: odom, eval, synth, bench.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Parameter precedence is flags > config file > built-in defaults; the
effective configuration is echoed into output file headers.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .alignment import RansacConfig
from .camera import NoiseModel
from .dataset import (
    load_dataset,
    save_intrinsics,
    write_depth_mm,
    write_intensity,
)
from .errors import DatasetError, OdometryError
from .evaluation import (
    SynthConfig,
    Trajectory,
    compare,
    coverage,
    integrate_trajectory,
    synth_scene,
    write_error_csv,
)
from .features import DescriptorConfig, DetectorConfig, save_features
from .matching import MatchConfig
from .pipeline import (
    PipelineConfig,
    process_frame_pair,
    read_estimates,
    run_sequence,
    write_estimates,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


def _build_pipeline_config(args) -> PipelineConfig:
    cfg = {}
    if getattr(args, "config", None):
        cfg = json.loads(Path(args.config).read_text())

    def pick(flag, key, default):
        v = getattr(args, flag, None)
        if v is not None:
            return v
        return cfg.get(key, default)

    ratio = float(pick("ratio", "lambda_ratio", 0.8))
    return PipelineConfig(
        detector=DetectorConfig(
            max_features=int(pick("max_features", "max_features", 1000))
        ),
        descriptor=DescriptorConfig(),
        matching=MatchConfig(lambda_ratio=ratio),
        ransac=RansacConfig(
            lambda_inlier=float(pick("inlier", "lambda_inlier", 0.05)),
            max_iterations=int(pick("ransac_iters", "ransac_iterations", 200)),
            seed=int(pick("seed", "seed", 0)),
        ),
        n_perturbations=int(pick("perturbations", "n_perturbations", 100)),
        covariance_multiplier=float(pick("multiplier", "covariance_multiplier", 9.0)),
        seed=int(pick("seed", "seed", 0)),
    )


def cmd_odom(args):
    cfg = _build_pipeline_config(args)
    ds = load_dataset(args.dataset)
    estimates, gaps = run_sequence(ds, cfg)
    out = args.out or "estimates.jsonl"
    write_estimates(out, estimates, cfg)
    n_ok = sum(1 for e in estimates if e.ok)
    print(f"{len(estimates)} estimates ({n_ok} ok, {len(gaps)} gaps) -> {out}")
    return EXIT_OK


def cmd_eval(args):
    estimates = read_estimates(args.estimates)
    gt = Trajectory.load_tum(args.groundtruth)
    if not estimates:
        print("no estimates to evaluate", file=sys.stderr)
        return EXIT_DATA

    # start integration from the ground-truth pose nearest the first estimate
    i0 = int(np.argmin(np.abs(gt.timestamps - estimates[0].t_a)))
    traj = integrate_trajectory(estimates, gt.poses[i0])
    result = compare(estimates, traj, gt)
    covs = [e.sigma_hat for e in estimates if e.ok]
    report = coverage(result.twist_errors, covs, multiplier=args.multiplier)

    out = args.out or "coverage.json"
    Path(out).write_text(report.to_json() + "\n")
    if args.csv:
        write_error_csv(args.csv, result)
    print(report.to_json())
    return EXIT_OK


def cmd_synth(args):
    raw = json.loads(Path(args.config).read_text())
    intr = raw.pop("intrinsics", {})
    cfg = SynthConfig(**raw)
    from .camera import CameraIntrinsics

    k = CameraIntrinsics(
        fx=float(intr.get("fx", 586.0)),
        fy=float(intr.get("fy", 586.0)),
        cx=float(intr.get("cx", 320.0)),
        cy=float(intr.get("cy", 240.0)),
        width=int(intr.get("width", 640)),
        height=int(intr.get("height", 480)),
    )
    noise = NoiseModel()
    seq, gt = synth_scene(cfg, k, noise)

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_intrinsics(outdir / "intrinsics.json", k, noise)
    gt.save_tum(outdir / "groundtruth.txt")
    lines = ["# synthetic dataset", "intrinsics intrinsics.json"]
    for i in range(len(seq)):
        item = seq.load(i)
        ts = float(gt.timestamps[i])
        if cfg.mode == "features":
            name = f"frame_{i:05d}.feat"
            save_features(item, outdir / name)
            lines.append(f"{ts!r} {name}")
        else:
            iname, dname = f"frame_{i:05d}.png", f"depth_{i:05d}.png"
            write_intensity(outdir / iname, item.intensity)
            write_depth_mm(outdir / dname, item.depth)
            lines.append(f"{ts!r} {iname} {dname}")
    (outdir / "manifest.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(seq)} frames to {outdir}")
    return EXIT_OK


def cmd_bench(args):
    cfg = _build_pipeline_config(args)
    ds = load_dataset(args.dataset)
    n = min(len(ds) - 1, args.pairs) if args.pairs else len(ds) - 1
    stage_times = {}
    totals = []
    prev = ds.load(0)
    for i in range(1, n + 1):
        cur = ds.load(i)
        est = process_frame_pair(prev, cur, ds.intrinsics, cfg, ds.noise)
        for k_, v in est.timings_ms.items():
            stage_times.setdefault(k_, []).append(v)
        totals.append(sum(est.timings_ms.values()))
        prev = cur
    report = {"pairs": len(totals)}
    for name, vals in list(stage_times.items()) + [("total", totals)]:
        arr = np.array(vals)
        report[name] = {
            "p50_ms": float(np.percentile(arr, 50)),
            "p90_ms": float(np.percentile(arr, 90)),
            "p99_ms": float(np.percentile(arr, 99)),
        }
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="rgbd-odom",
        description="Frame-to-frame RGBD odometry with 6x6 covariance estimates",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--ratio", type=float, help="Lowe ratio threshold (0, 1)")
        sp.add_argument("--inlier", type=float, help="RANSAC inlier threshold, meters")
        sp.add_argument("--ransac-iters", dest="ransac_iters", type=int)
        sp.add_argument("--perturbations", type=int, help="covariance sample count")
        sp.add_argument("--multiplier", type=float, default=None)
        sp.add_argument("--max-features", dest="max_features", type=int)
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("odom", help="run the odometry pipeline over a dataset")
    sp.add_argument("dataset", help="manifest file path")
    sp.add_argument("--out", help="output JSON-lines estimate stream")
    common(sp)
    sp.set_defaults(func=cmd_odom)

    sp = sub.add_parser("eval", help="coverage report for an estimate stream")
    sp.add_argument("estimates", help="JSON-lines estimate stream")
    sp.add_argument("groundtruth", help="TUM-format trajectory file")
    sp.add_argument("--multiplier", type=float, default=9.0)
    sp.add_argument("--out", help="coverage report JSON path")
    sp.add_argument("--csv", help="error-series CSV path")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("synth", help="generate a synthetic dataset + ground truth")
    sp.add_argument("config", help="SynthConfig JSON")
    sp.add_argument("outdir")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("bench", help="per-stage timing percentiles on a dataset")
    sp.add_argument("dataset", help="manifest file path")
    sp.add_argument("--pairs", type=int, default=None)
    common(sp)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ValueError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, OdometryError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # pragma: no cover - last resort
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
