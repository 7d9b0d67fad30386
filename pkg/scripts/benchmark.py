#!/usr/bin/env python3
"""Steady-state latency benchmark on rendered synthetic frames.

Renders a textured-plane sequence, then times extract + frame-pair
processing the way a live driver would pay for it (one feature pass per
frame). Prints total and per-stage percentiles.

    python3 scripts/benchmark.py --pairs 100
"""

import argparse
import time

import numpy as np

from rgbd_odom.camera import CameraIntrinsics
from rgbd_odom.evaluation import SynthConfig, synth_scene
from rgbd_odom.features import extract
from rgbd_odom.pipeline import PipelineConfig, process_frame_pair


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=100)
    ap.add_argument("--max-features", type=int, default=1000)
    ap.add_argument("--perturbations", type=int, default=100)
    ap.add_argument("--seed", type=int, default=9)
    args = ap.parse_args()

    k = CameraIntrinsics(fx=586.0, fy=586.0, cx=320.0, cy=240.0, width=640, height=480)
    cfg = SynthConfig(
        mode="frames", n_frames=args.pairs + 1, trajectory="line", speed=0.002,
        noise=True, texture_cell=6, seed=args.seed,
    )
    seq, _ = synth_scene(cfg, k)

    from rgbd_odom.features import DetectorConfig

    pcfg = PipelineConfig(
        detector=DetectorConfig(max_features=args.max_features),
        n_perturbations=args.perturbations,
    )

    totals = []
    stages = {}
    prev = extract(seq.load(0), k, pcfg.detector, pcfg.descriptor)
    for i in range(1, args.pairs + 1):
        t0 = time.perf_counter()
        feats = extract(seq.load(i), k, pcfg.detector, pcfg.descriptor)
        t1 = time.perf_counter()
        est = process_frame_pair(prev, feats, k, pcfg)
        totals.append((time.perf_counter() - t0) * 1e3)
        stages.setdefault("extract", []).append((t1 - t0) * 1e3)
        for name, v in est.timings_ms.items():
            if name != "features":  # near zero: features are precomputed above
                stages.setdefault(name, []).append(v)
        prev = feats

    print(f"{len(totals)} pairs, {len(prev)} features/frame")
    rows = [("total", totals)] + sorted(stages.items())
    for name, vals in rows:
        arr = np.array(vals)
        print(
            f"  {name:12s} p50 {np.percentile(arr, 50):7.2f} ms   "
            f"p90 {np.percentile(arr, 90):7.2f} ms   "
            f"p99 {np.percentile(arr, 99):7.2f} ms"
        )


if __name__ == "__main__":
    main()
