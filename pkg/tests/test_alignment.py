import numpy as np
import pytest

from rgbd_odom.alignment import (
    LAMBDA_FLOOR,
    AlignmentResult,
    CorrespondenceSet,
    RansacConfig,
    batched_rigid_align,
    count_inliers,
    ransac_align,
    refine_threshold,
    umeyama_align,
)
from rgbd_odom.errors import (
    DegenerateConfiguration,
    InsufficientCorrespondences,
    NoConsensus,
    TooFewInliers,
)
from rgbd_odom.geometry import RigidTransform, rotation_geodesic_distance, so3_exp


def random_pose(rng, max_angle=0.5, max_t=0.5):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return RigidTransform(so3_exp(axis * rng.uniform(0, max_angle)), rng.uniform(-max_t, max_t, 3))


def planted_problem(rng, n_inliers=70, n_outliers=30, noise=0.0):
    """Clouds where points_a = T(points_b) for the first n_inliers pairs."""
    T = random_pose(rng)
    q = rng.uniform(-1, 1, (n_inliers, 3)) + [0, 0, 2.5]
    p = T.apply(q) + rng.normal(0, noise, (n_inliers, 3))
    qo = rng.uniform(-1, 1, (n_outliers, 3)) + [0, 0, 2.5]
    po = rng.uniform(-1, 1, (n_outliers, 3)) + [0, 0, 2.5]
    corr = CorrespondenceSet(np.vstack([p, po]), np.vstack([q, qo]))
    return T, corr


class TestUmeyama:
    def test_exact_recovery(self):
        rng = np.random.default_rng(0)
        T = random_pose(rng)
        q = rng.uniform(-1, 1, (20, 3))
        est = umeyama_align(T.apply(q), q)
        assert rotation_geodesic_distance(est.rotation, T.rotation) < 1e-12
        assert np.linalg.norm(est.translation - T.translation) < 1e-12

    def test_reflection_rejected(self):
        # a mirrored cloud must map through a proper rotation (det +1)
        rng = np.random.default_rng(1)
        q = rng.uniform(-1, 1, (15, 3))
        p = q * [1, 1, -1]
        est = umeyama_align(p, q)
        assert abs(np.linalg.det(est.rotation) - 1.0) < 1e-12

    def test_too_few_points(self):
        with pytest.raises(InsufficientCorrespondences):
            umeyama_align(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_collinear_degenerate(self):
        t = np.linspace(0, 1, 10)
        line = np.stack([t, 2 * t, 3 * t], axis=1)
        with pytest.raises(DegenerateConfiguration):
            umeyama_align(line, line)

    def test_least_squares_optimality(self):
        # perturbing the optimum in any direction cannot lower the cost
        rng = np.random.default_rng(2)
        T = random_pose(rng)
        q = rng.uniform(-1, 1, (30, 3))
        p = T.apply(q) + rng.normal(0, 0.05, (30, 3))
        est = umeyama_align(p, q)
        base = np.sum((p - est.apply(q)) ** 2)
        for _ in range(20):
            dt = rng.normal(0, 1e-3, 3)
            dR = so3_exp(rng.normal(0, 1e-3, 3))
            wiggled = RigidTransform(dR @ est.rotation, est.translation + dt)
            assert np.sum((p - wiggled.apply(q)) ** 2) >= base - 1e-12

    def test_batched_matches_single(self):
        rng = np.random.default_rng(3)
        P = rng.uniform(-1, 1, (8, 6, 3))
        Q = rng.uniform(-1, 1, (8, 6, 3))
        R, t, ok = batched_rigid_align(P, Q)
        assert ok.all()
        for i in range(8):
            single = umeyama_align(P[i], Q[i])
            assert np.allclose(R[i], single.rotation, atol=1e-10)
            assert np.allclose(t[i], single.translation, atol=1e-10)

    def test_batched_flags_degenerate(self):
        t = np.linspace(0, 1, 5)
        line = np.stack([t, t, t], axis=1)
        P = np.stack([line, np.random.default_rng(4).uniform(-1, 1, (5, 3))])
        _, _, ok = batched_rigid_align(P, P)
        assert not ok[0] and ok[1]


class TestThresholdRefinement:
    def test_shrinks_toward_3_sigma(self):
        res = np.array([0.01, 0.02, 0.015, 0.012])
        sigma = np.sqrt(np.sum(res**2) / 3)
        assert refine_threshold(res, 0.1) == pytest.approx(3 * sigma)

    def test_never_exceeds_current(self):
        res = np.full(10, 0.04)
        assert refine_threshold(res, 0.05) <= 0.05

    def test_floor(self):
        res = np.full(10, 1e-9)
        assert refine_threshold(res, 0.05) == LAMBDA_FLOOR

    def test_too_few(self):
        with pytest.raises(TooFewInliers):
            refine_threshold([0.01], 0.05)


class TestCountInliers:
    def test_strict_inequality(self):
        corr = CorrespondenceSet(np.array([[0.05, 0, 0], [0.04, 0, 0], [0, 0, 0]]),
                                 np.zeros((3, 3)))
        idx, res = count_inliers(corr, RigidTransform.identity(), 0.05)
        assert list(idx) == [1, 2]  # residual exactly 0.05 is excluded
        assert (res < 0.05).all()

    def test_bad_threshold(self):
        corr = CorrespondenceSet(np.zeros((3, 3)), np.zeros((3, 3)))
        with pytest.raises(ValueError):
            count_inliers(corr, RigidTransform.identity(), 0.0)


class TestRansac:
    def test_clean_problem(self):
        rng = np.random.default_rng(5)
        T, corr = planted_problem(rng, n_inliers=40, n_outliers=0)
        r = ransac_align(corr, RansacConfig(seed=1))
        assert rotation_geodesic_distance(r.transform.rotation, T.rotation) < 1e-9
        assert np.linalg.norm(r.transform.translation - T.translation) < 1e-9
        assert r.inlier_indices.size == 40

    def test_contaminated_problem(self):
        rng = np.random.default_rng(6)
        T, corr = planted_problem(rng, n_inliers=70, n_outliers=30, noise=0.003)
        r = ransac_align(corr, RansacConfig(seed=1))
        # all recovered inliers are planted ones, and most planted ones survive
        assert (r.inlier_indices < 70).all()
        assert r.inlier_indices.size >= 63
        assert np.linalg.norm(r.transform.translation - T.translation) < 0.02
        assert rotation_geodesic_distance(r.transform.rotation, T.rotation) < np.deg2rad(1)

    def test_fixed_iteration_budget(self):
        rng = np.random.default_rng(7)
        _, corr = planted_problem(rng, n_inliers=30, n_outliers=0)
        r = ransac_align(corr, RansacConfig(max_iterations=50, seed=2))
        assert r.iterations == 50

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(8)
        _, corr = planted_problem(rng, noise=0.003)
        a = ransac_align(corr, RansacConfig(seed=3))
        b = ransac_align(corr, RansacConfig(seed=3))
        assert np.array_equal(a.transform.rotation, b.transform.rotation)
        assert np.array_equal(a.transform.translation, b.transform.translation)
        assert np.array_equal(a.inlier_indices, b.inlier_indices)

    def test_no_consensus(self):
        rng = np.random.default_rng(9)
        corr = CorrespondenceSet(
            rng.uniform(-1, 1, (20, 3)), rng.uniform(-1, 1, (20, 3)) + 10
        )
        with pytest.raises(NoConsensus):
            ransac_align(corr, RansacConfig(seed=4))

    def test_too_few_correspondences(self):
        corr = CorrespondenceSet(np.zeros((2, 3)), np.zeros((2, 3)))
        with pytest.raises(InsufficientCorrespondences):
            ransac_align(corr)

    def test_residuals_respect_refined_threshold(self):
        rng = np.random.default_rng(10)
        _, corr = planted_problem(rng, noise=0.003)
        r = ransac_align(corr, RansacConfig(seed=5))
        assert r.refined_threshold <= 0.05
        assert (r.inlier_residuals < r.refined_threshold).all()

    def test_refinement_shrinks_threshold_on_tight_data(self):
        rng = np.random.default_rng(11)
        _, corr = planted_problem(rng, n_inliers=50, n_outliers=0, noise=0.001)
        r = ransac_align(corr, RansacConfig(seed=6))
        # 3 sigma of ~1.7mm 3D noise is well under the 5cm starting threshold
        assert r.refined_threshold < 0.02

    def test_triplet_model_flag_skips_refit(self):
        rng = np.random.default_rng(12)
        _, corr = planted_problem(rng, noise=0.003)
        r = ransac_align(corr, RansacConfig(seed=7, return_triplet_model=True))
        assert r.refined_threshold == 0.05  # no refinement occurred

    def test_trace_collection(self):
        rng = np.random.default_rng(13)
        _, corr = planted_problem(rng, n_inliers=20, n_outliers=0)
        r = ransac_align(corr, RansacConfig(seed=8, max_iterations=20), collect_trace=True)
        assert 0 < len(r.trace) <= 20
        for it, triplet, count, rms in r.trace:
            assert len(set(triplet)) == 3 and count >= 0 and rms >= 0

    def test_degenerate_triplets_skipped(self):
        # collinear cloud plus a few off-line points: only hypotheses using
        # an off-line point are valid, and consensus is still reached
        rng = np.random.default_rng(14)
        t = np.linspace(0, 1, 30)
        line = np.stack([t, t, np.full_like(t, 2.0)], axis=1)
        extras = rng.uniform(-1, 1, (6, 3)) + [0, 0, 2]
        q = np.vstack([line, extras])
        corr = CorrespondenceSet(q, q)
        r = ransac_align(corr, RansacConfig(seed=9))
        assert np.linalg.norm(r.transform.translation) < 1e-9


class TestCorrespondenceSet:
    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            CorrespondenceSet(np.zeros((3, 3)), np.zeros((4, 3)))

    def test_nonfinite_rejected(self):
        bad = np.zeros((3, 3))
        bad[0, 0] = np.nan
        with pytest.raises(ValueError):
            CorrespondenceSet(bad, np.zeros((3, 3)))

    def test_subset_carries_sigmas(self):
        rng = np.random.default_rng(15)
        corr = CorrespondenceSet(
            rng.normal(size=(5, 3)), rng.normal(size=(5, 3)),
            sigmas_a=np.abs(rng.normal(size=(5, 3))),
            sigmas_b=np.abs(rng.normal(size=(5, 3))),
            match_indices=np.arange(10).reshape(5, 2),
        )
        sub = corr.subset([1, 3])
        assert len(sub) == 2
        assert np.array_equal(sub.sigmas_a, corr.sigmas_a[[1, 3]])
        assert np.array_equal(sub.match_indices, corr.match_indices[[1, 3]])
