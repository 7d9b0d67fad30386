import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgbd_odom.camera import (
    CameraIntrinsics,
    NoiseModel,
    RgbdFrame,
    ShiftTable,
    back_project,
    back_project_array,
    noise_sigma,
    noise_sigma_array,
    project,
    project_array,
    reconstruct_cloud,
)
from rgbd_odom.errors import BehindCamera, InvalidDepth, OutOfBounds


class TestBackProjection:
    def test_principal_point(self, intrinsics):
        p = back_project(320.0, 240.0, 2.0, intrinsics)
        assert np.allclose(p, [0, 0, 2.0])

    def test_off_center_pixel(self, intrinsics):
        # hand-computed: X = (400-320)*1.5/586, Y = (300-240)*1.5/586
        p = back_project(400.0, 300.0, 1.5, intrinsics)
        assert np.allclose(p, [80 * 1.5 / 586, 60 * 1.5 / 586, 1.5])

    def test_depth_scales_linearly(self, intrinsics):
        p1 = back_project(100.0, 100.0, 1.0, intrinsics)
        p2 = back_project(100.0, 100.0, 2.0, intrinsics)
        assert np.allclose(p2, 2.0 * p1)

    def test_out_of_bounds_pixel(self, intrinsics):
        with pytest.raises(OutOfBounds):
            back_project(640.0, 100.0, 1.0, intrinsics)
        with pytest.raises(OutOfBounds):
            back_project(-1.0, 100.0, 1.0, intrinsics)

    def test_invalid_depth(self, intrinsics):
        for z in (0.0, -1.0, 0.29, 6.01, np.nan):
            with pytest.raises(InvalidDepth):
                back_project(100.0, 100.0, z, intrinsics)

    def test_array_matches_scalar(self, intrinsics):
        rng = np.random.default_rng(0)
        xs = rng.uniform(0, 639, 50)
        ys = rng.uniform(0, 479, 50)
        zs = rng.uniform(0.5, 5.0, 50)
        pts = back_project_array(xs, ys, zs, intrinsics)
        for i in range(50):
            assert np.allclose(pts[i], back_project(xs[i], ys[i], zs[i], intrinsics))

    @settings(max_examples=100, deadline=None)
    @given(
        st.floats(0, 639), st.floats(0, 479), st.floats(0.3, 6.0),
    )
    def test_project_round_trip(self, x, y, z):
        k = CameraIntrinsics(fx=586.0, fy=586.0, cx=320.0, cy=240.0, width=640, height=480)
        p = back_project(x, y, z, k)
        x2, y2 = project(p, k)
        assert abs(x2 - x) < 1e-9 and abs(y2 - y) < 1e-9

    def test_project_behind_camera(self, intrinsics):
        with pytest.raises(BehindCamera):
            project(np.array([0.0, 0.0, -1.0]), intrinsics)

    def test_project_array_matches_scalar(self, intrinsics):
        rng = np.random.default_rng(1)
        pts = np.stack(
            [rng.uniform(-1, 1, 20), rng.uniform(-1, 1, 20), rng.uniform(0.5, 5, 20)],
            axis=1,
        )
        xs, ys = project_array(pts, intrinsics)
        for i in range(20):
            x, y = project(pts[i], intrinsics)
            assert abs(xs[i] - x) < 1e-12 and abs(ys[i] - y) < 1e-12


class TestShift:
    def test_constant_shift_applied(self):
        k = CameraIntrinsics(
            fx=586.0, fy=586.0, cx=320.0, cy=240.0, width=640, height=480,
            shift=lambda x, y: (np.full_like(x, 2.0), np.full_like(x, -1.0)),
        )
        p = back_project(320.0, 240.0, 1.0, k)
        assert np.allclose(p, [2.0 / 586, -1.0 / 586, 1.0])

    def test_shift_round_trip(self):
        k = CameraIntrinsics(
            fx=586.0, fy=586.0, cx=320.0, cy=240.0, width=640, height=480,
            shift=lambda x, y: (np.full_like(x, 2.0), np.full_like(x, -1.0)),
        )
        p = back_project(100.0, 200.0, 1.5, k)
        x2, y2 = project(p, k)
        assert abs(x2 - 100.0) < 1e-9 and abs(y2 - 200.0) < 1e-9

    def test_shift_table_lookup(self, tmp_path):
        dx = np.zeros((480, 640))
        dy = np.zeros((480, 640))
        dx[240, 320] = 0.5
        dy[240, 320] = -0.25
        path = tmp_path / "shift.npz"
        np.savez(path, dx=dx, dy=dy)
        table = ShiftTable.load(path)
        sdx, sdy = table(320.2, 239.8)  # nearest pixel is (320, 240)
        assert sdx == 0.5 and sdy == -0.25
        sdx, sdy = table(0, 0)
        assert sdx == 0.0 and sdy == 0.0

    def test_shift_table_clips_outside(self, tmp_path):
        dx = np.ones((4, 4))
        dy = np.ones((4, 4))
        path = tmp_path / "shift.npz"
        np.savez(path, dx=dx, dy=dy)
        table = ShiftTable.load(path)
        sdx, _ = table(100.0, -5.0)
        assert sdx == 1.0


class TestNoiseModel:
    def test_kappa_default(self):
        # kappa = |disparity slope| * disparity sigma = 2.85e-3 * 0.5
        assert abs(NoiseModel().kappa - 1.425e-3) < 1e-12

    def test_kappa_override(self):
        assert NoiseModel(kappa_override=2e-3).kappa == 2e-3

    def test_sigma_z_quadratic(self):
        n = NoiseModel()
        assert abs(n.sigma_z(2.0) / n.sigma_z(1.0) - 4.0) < 1e-12

    def test_sigma_at_center(self, intrinsics, noise_model):
        s = noise_sigma(320.0, 240.0, 2.0, intrinsics, noise_model)
        assert s[0] == 0.0 and s[1] == 0.0
        assert abs(s[2] - 1.425e-3 * 4.0) < 1e-12

    def test_sigma_lateral_scaling(self, intrinsics, noise_model):
        # frozen oracle values: sigma_x = |x-cx|/fx * sigma_z
        s = noise_sigma(620.0, 460.0, 2.0, intrinsics, noise_model)
        sz = 1.425e-3 * 4.0
        assert abs(s[0] - 300.0 / 586.0 * sz) < 1e-12
        assert abs(s[1] - 220.0 / 586.0 * sz) < 1e-12

    def test_corner_ratio(self, intrinsics, noise_model):
        # at the image corner the lateral sigmas approach half of sigma_z
        s = noise_sigma(639.0, 479.0, 3.0, intrinsics, noise_model)
        assert abs(s[0] / s[2] - 319.0 / 586.0) < 1e-12
        assert 0.5 < s[0] / s[2] < 0.6
        assert 0.38 < s[1] / s[2] < 0.45

    def test_sigmas_nonnegative(self, intrinsics, noise_model):
        # left of the principal point the offset is negative; sigma is not
        s = noise_sigma(10.0, 10.0, 1.0, intrinsics, noise_model)
        assert (s >= 0).all()

    def test_array_matches_scalar(self, intrinsics, noise_model):
        rng = np.random.default_rng(2)
        xs = rng.uniform(0, 639, 30)
        ys = rng.uniform(0, 479, 30)
        zs = rng.uniform(0.5, 5.0, 30)
        arr = noise_sigma_array(xs, ys, zs, intrinsics, noise_model)
        for i in range(30):
            assert np.allclose(arr[i], noise_sigma(xs[i], ys[i], zs[i], intrinsics, noise_model))


class TestRgbdFrame:
    def test_rgb_converted_to_luma(self):
        rgb = np.zeros((4, 4, 3), dtype=np.uint8)
        rgb[..., 0] = 100
        rgb[..., 1] = 50
        rgb[..., 2] = 200
        f = RgbdFrame(rgb, np.ones((4, 4)))
        expected = round(100 * 0.299 + 50 * 0.587 + 200 * 0.114)
        assert f.intensity.dtype == np.uint8
        assert (f.intensity == expected).all()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            RgbdFrame(np.zeros((4, 4), dtype=np.uint8), np.ones((4, 5)))

    def test_validity_mask(self, intrinsics):
        depth = np.full((480, 640), 2.0)
        depth[0, 0] = np.nan
        depth[0, 1] = 0.0
        depth[0, 2] = 0.1  # below z_min
        depth[0, 3] = 7.0  # above z_max
        f = RgbdFrame(np.zeros((480, 640), dtype=np.uint8), depth)
        mask = f.validity_mask(intrinsics)
        assert not mask[0, 0] and not mask[0, 1] and not mask[0, 2] and not mask[0, 3]
        assert mask[100, 100]


class TestReconstructCloud:
    def test_rejects_invalid_depth(self, intrinsics):
        depth = np.full((480, 640), 2.0)
        depth[50, 50] = np.nan
        f = RgbdFrame(np.zeros((480, 640), dtype=np.uint8), depth)
        pts, sig, rejected = reconstruct_cloud(f, intrinsics, [(40, 40), (50, 50), (60, 60)])
        assert rejected == [1]
        assert pts.shape == (2, 3) and sig.shape == (2, 3)

    def test_values(self, intrinsics, noise_model):
        depth = np.full((480, 640), 1.5)
        f = RgbdFrame(np.zeros((480, 640), dtype=np.uint8), depth)
        pts, sig, rejected = reconstruct_cloud(f, intrinsics, [(400.0, 300.0)], noise_model)
        assert not rejected
        assert np.allclose(pts[0], back_project(400.0, 300.0, 1.5, intrinsics))
        assert np.allclose(sig[0], noise_sigma(400.0, 300.0, 1.5, intrinsics, noise_model))


class TestIntrinsicsValidation:
    def test_bad_focal(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=0, fy=586, cx=320, cy=240, width=640, height=480)

    def test_principal_point_outside(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=586, fy=586, cx=700, cy=240, width=640, height=480)

    def test_bad_depth_range(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(
                fx=586, fy=586, cx=320, cy=240, width=640, height=480, depth_range=(2.0, 1.0)
            )
