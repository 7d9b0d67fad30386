import numpy as np
import pytest

from rgbd_odom.camera import NoiseModel
from rgbd_odom.errors import DatasetError
from rgbd_odom.evaluation import SynthConfig, synth_scene
from rgbd_odom.geometry import transform_of_vector
from rgbd_odom.pipeline import (
    FAIL_TOO_FEW_FEATURES,
    FAIL_TOO_FEW_MATCHES,
    InMemorySequence,
    OdometryEstimate,
    PipelineConfig,
    cloud_from_features,
    process_frame_pair,
    read_estimates,
    run_sequence,
    write_estimates,
)
from rgbd_odom.features import FeatureSet


def synth_pair(intrinsics, speed=0.01, noise=False, seed=0, n=150):
    cfg = SynthConfig(
        n_landmarks=n, trajectory="line", speed=speed, n_frames=2, noise=noise, seed=seed
    )
    seq, traj = synth_scene(cfg, intrinsics)
    return seq.load(0), seq.load(1), traj


class TestProcessFramePair:
    def test_noise_free_recovery(self, intrinsics):
        a, b, traj = synth_pair(intrinsics, speed=0.02)
        est = process_frame_pair(a, b, intrinsics, PipelineConfig())
        assert est.ok
        T = transform_of_vector(est.xi)
        # camera moved +x by 0.02, so frame-b points map into frame-a with -x... the
        # relative camera motion: T maps b-frame coordinates into a-frame
        from rgbd_odom.geometry import compose, invert

        rel = compose(invert(traj.poses[0]), traj.poses[1])
        assert np.linalg.norm(T.translation - rel.translation) < 1e-6
        assert np.linalg.norm(T.rotation - rel.rotation) < 1e-9

    def test_covariance_attached(self, intrinsics):
        a, b, _ = synth_pair(intrinsics, noise=True)
        est = process_frame_pair(a, b, intrinsics, PipelineConfig())
        assert est.ok
        assert est.sigma_hat.shape == (6, 6)
        assert np.allclose(est.sigma_scaled, 9.0 * est.sigma_hat)
        assert (np.diag(est.sigma_hat) >= 0).all()

    def test_identical_frames_zero_motion(self, intrinsics):
        a, _, _ = synth_pair(intrinsics, noise=True)
        est = process_frame_pair(a, a, intrinsics, PipelineConfig())
        assert est.ok
        assert np.linalg.norm(est.xi) < 1e-12

    def test_too_few_features(self, intrinsics):
        empty = FeatureSet.empty()
        est = process_frame_pair(empty, empty, intrinsics, PipelineConfig())
        assert not est.ok and est.failure_reason == FAIL_TOO_FEW_FEATURES

    def test_too_few_matches(self, intrinsics):
        rng = np.random.default_rng(0)
        mk = lambda seed: FeatureSet(
            0,
            np.column_stack([rng.uniform(50, 590, 8), rng.uniform(50, 430, 8)]),
            np.full(8, 2.0),
            np.zeros(8),
            "binary",
            np.random.default_rng(seed).integers(0, 256, (8, 32)).astype(np.uint8),
        )
        est = process_frame_pair(mk(1), mk(2), intrinsics, PipelineConfig())
        assert not est.ok and est.failure_reason == FAIL_TOO_FEW_MATCHES

    def test_timings_recorded(self, intrinsics):
        a, b, _ = synth_pair(intrinsics, noise=True)
        est = process_frame_pair(a, b, intrinsics, PipelineConfig())
        for stage in ("matching", "reconstruct", "ransac", "covariance"):
            assert stage in est.timings_ms and est.timings_ms[stage] >= 0

    def test_deterministic(self, intrinsics):
        a, b, _ = synth_pair(intrinsics, noise=True)
        e1 = process_frame_pair(a, b, intrinsics, PipelineConfig(seed=5))
        e2 = process_frame_pair(a, b, intrinsics, PipelineConfig(seed=5))
        assert np.array_equal(e1.xi, e2.xi)
        assert np.array_equal(e1.sigma_hat, e2.sigma_hat)


class TestRunSequence:
    def test_sequence_of_estimates(self, intrinsics):
        cfg = SynthConfig(n_landmarks=150, trajectory="line", speed=0.01, n_frames=5, noise=True)
        seq, _ = synth_scene(cfg, intrinsics)
        estimates, gaps = run_sequence(seq, PipelineConfig())
        assert len(estimates) == 4 and gaps == []
        assert all(e.ok for e in estimates)
        assert [(e.frame_a, e.frame_b) for e in estimates] == [(0, 1), (1, 2), (2, 3), (3, 4)]

    def test_bad_frame_skipped_with_gap(self, intrinsics):
        cfg = SynthConfig(n_landmarks=150, trajectory="line", speed=0.01, n_frames=4, noise=False)
        seq, _ = synth_scene(cfg, intrinsics)

        class Flaky(InMemorySequence):
            def load(self, i):
                if i == 1:
                    raise DatasetError("corrupt frame")
                return super().load(i)

        flaky = Flaky(seq.items, intrinsics, seq.noise)
        estimates, gaps = run_sequence(flaky, PipelineConfig())
        assert [g.frame_index for g in gaps] == [1]
        # the chain bridges the gap: (0,2), (2,3)
        assert [(e.frame_a, e.frame_b) for e in estimates] == [(0, 2), (2, 3)]

    def test_too_short(self, intrinsics):
        seq = InMemorySequence([FeatureSet.empty()], intrinsics)
        with pytest.raises(DatasetError):
            run_sequence(seq)


class TestEstimateIO:
    def test_round_trip(self, intrinsics, tmp_path):
        cfg = SynthConfig(n_landmarks=150, trajectory="line", speed=0.01, n_frames=3, noise=True)
        seq, _ = synth_scene(cfg, intrinsics)
        estimates, _ = run_sequence(seq, PipelineConfig())
        path = tmp_path / "est.jsonl"
        write_estimates(path, estimates, PipelineConfig())
        back = read_estimates(path)
        assert len(back) == len(estimates)
        for e, b in zip(estimates, back):
            assert b.status == e.status
            assert np.array_equal(b.xi, e.xi)
            assert np.array_equal(b.sigma_hat, e.sigma_hat)
            assert np.array_equal(b.sigma_scaled, e.sigma_scaled)
            assert b.inlier_count == e.inlier_count

    def test_config_header_written(self, intrinsics, tmp_path):
        path = tmp_path / "est.jsonl"
        write_estimates(path, [], PipelineConfig())
        first = path.read_text().splitlines()[0]
        assert first.startswith("# config ")
        import json

        hdr = json.loads(first[len("# config "):])
        assert hdr["lambda_ratio"] == 0.8 and hdr["ransac"]["lambda_inlier"] == 0.05

    def test_failed_estimate_round_trip(self, tmp_path):
        est = OdometryEstimate(
            frame_a=3, frame_b=4, t_a=0.1, t_b=0.133, status="failed",
            failure_reason="NoConsensus", match_count=7,
        )
        path = tmp_path / "est.jsonl"
        write_estimates(path, [est])
        back = read_estimates(path)[0]
        assert back.status == "failed" and back.failure_reason == "NoConsensus"
        assert back.xi is None and back.sigma_hat is None


class TestCloudFromFeatures:
    def test_matches_camera_model(self, intrinsics, noise_model):
        from rgbd_odom.camera import back_project_array, noise_sigma_array

        rng = np.random.default_rng(1)
        fs = FeatureSet(
            0,
            np.column_stack([rng.uniform(0, 639, 10), rng.uniform(0, 479, 10)]),
            rng.uniform(0.5, 5, 10),
            np.zeros(10),
            "binary",
            rng.integers(0, 256, (10, 32)).astype(np.uint8),
        )
        pts, sig = cloud_from_features(fs, intrinsics, noise_model)
        assert np.allclose(pts, back_project_array(fs.xy[:, 0], fs.xy[:, 1], fs.depth, intrinsics))
        assert np.allclose(
            sig, noise_sigma_array(fs.xy[:, 0], fs.xy[:, 1], fs.depth, intrinsics, noise_model)
        )
