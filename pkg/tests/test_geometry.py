import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarsr.geometry import (
    PointCloud,
    Pose,
    RangeImage,
    SensorIntrinsics,
    beam_elevations,
    denormalize,
    normalize,
    project,
    sanitize_ranges,
    subsample_intrinsics,
    subsample_rows,
    unproject,
    upsample_intrinsics,
)

VLP16 = SensorIntrinsics(channels=16, h_res=1024)


def random_image(rng, intr, density=0.7):
    data = rng.uniform(intr.min_range_m, intr.max_range_m, (intr.channels, intr.h_res))
    data[rng.random(data.shape) > density] = 0.0
    return RangeImage(intr, data)


def beam_aligned_cloud(rng, intr, n):
    """n points on distinct pixels, exactly on their beam, anywhere inside the column."""
    flat = rng.choice(intr.channels * intr.h_res, n, replace=False)
    rows, cols = np.divmod(flat, intr.h_res)
    phi = beam_elevations(intr)[rows]
    theta = (cols + rng.uniform(0.01, 0.99, n)) / intr.h_res * 2 * math.pi - math.pi
    r = rng.uniform(intr.min_range_m + 1e-3, intr.max_range_m - 1e-3, n)
    pts = np.stack([r * np.cos(phi) * np.cos(theta), r * np.cos(phi) * np.sin(theta), r * np.sin(phi)], 1)
    return PointCloud(pts, rows), rows, cols, r


class TestIntrinsics:
    def test_vlp16_elevations_step_two_degrees(self):
        deg = np.degrees(beam_elevations(VLP16))
        np.testing.assert_allclose(deg, 15.0 - 2.0 * np.arange(16), atol=1e-12)

    def test_two_channels_are_the_endpoints(self):
        deg = np.degrees(beam_elevations(SensorIntrinsics(channels=2)))
        np.testing.assert_allclose(deg, [15.0, -15.0])

    def test_64_channel_spacing(self):
        deg = np.degrees(beam_elevations(SensorIntrinsics(channels=64)))
        np.testing.assert_allclose(np.diff(deg), -30.0 / 63.0, rtol=1e-12)
        assert SensorIntrinsics(channels=64).spacing_deg == pytest.approx(0.47619047619)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"channels": 1},
            {"channels": 16, "h_res": 3},
            {"channels": 16, "v_fov_deg": 0.0},
            {"channels": 16, "v_fov_deg": 180.0},
            {"channels": 16, "min_range_m": 0.0},
            {"channels": 16, "max_range_m": 0.2},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SensorIntrinsics(**kwargs)

    def test_dict_round_trip(self):
        intr = SensorIntrinsics(channels=32, h_res=512, v_fov_deg=26.8, v_center_deg=-1.5)
        assert SensorIntrinsics.from_dict(intr.to_dict()) == intr


class TestRangeImage:
    def test_rejects_out_of_interval_values(self):
        data = np.zeros((16, 1024), np.float32)
        data[0, 0] = 0.1
        with pytest.raises(ValueError):
            RangeImage(VLP16, data)
        data[0, 0] = 100.5
        with pytest.raises(ValueError):
            RangeImage(VLP16, data)
        data[0, 0] = np.nan
        with pytest.raises(ValueError):
            RangeImage(VLP16, data)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            RangeImage(VLP16, np.zeros((16, 512)))

    def test_immutable(self):
        img = RangeImage.zeros(VLP16)
        with pytest.raises(ValueError):
            img.data[0, 0] = 5.0

    def test_sanitize(self):
        out = sanitize_ranges([[np.nan, np.inf, 0.1, 50.0, 120.0]], SensorIntrinsics(2, 4))
        np.testing.assert_array_equal(out, [[0, 0, 0, 50, 100]])


class TestProject:
    def test_beam_aligned_forward_point(self):
        r = 10.0
        e = math.radians(15.0)
        img = project(PointCloud([[r * math.cos(e), 0.0, r * math.sin(e)]], [0]), VLP16)
        assert img.data[0, 512] == pytest.approx(10.0)
        assert np.count_nonzero(img.data) == 1

    def test_empty_cloud(self):
        assert not project(PointCloud.empty(), VLP16).data.any()

    def test_rear_seam_is_column_zero(self):
        intr = SensorIntrinsics(3, 8, 10.0)  # beams at +5, 0, -5 deg
        img = project(PointCloud([[-5.0, -1e-9, 0.0]], [1]), intr)
        assert img.data[1, 0] == pytest.approx(5.0)
        img = project(PointCloud([[-5.0, 1e-9, 0.0]], [1]), intr)
        assert img.data[1, 7] == pytest.approx(5.0)

    def test_collision_keeps_closest(self):
        pts = [[10.0, 0.0, 0.0], [4.0, 0.0, 0.0], [7.0, 0.0, 0.0]]
        img = project(PointCloud(pts, [0, 0, 0]), SensorIntrinsics(3, 16))
        assert img.data[1, 8] == pytest.approx(4.0)

    def test_drops_out_of_range_and_fov(self):
        # too close, too far, 45 deg up, and one valid point at 0 deg
        pts = [[0.1, 0.0, 0.0], [150.0, 0.0, 0.0], [1.0, 0.0, 1.0], [5.0, 0.0, 0.0]]
        img, dropped = project(PointCloud(pts, [0] * 4), SensorIntrinsics(3, 16), return_dropped=True)
        assert dropped == 3
        assert np.count_nonzero(img.data) == 1 and img.data[1, 8] == pytest.approx(5.0)

    def test_half_spacing_rejection(self):
        intr = SensorIntrinsics(3, 16, 20.0)  # beams at +10, 0, -10
        for deg, kept in [(4.9, True), (5.1, True), (-14.9, True), (15.1, False), (-15.1, False)]:
            e = math.radians(deg)
            img = project(PointCloud([[5 * math.cos(e), 0, 5 * math.sin(e)]], [0]), intr)
            assert bool(img.data.any()) == kept, deg

    def test_range_never_outside_interval(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(0, 60, (5000, 3))
        img = project(PointCloud(pts, np.zeros(5000)), VLP16)
        v = img.data[img.data != 0]
        assert v.min() >= 0.3 and v.max() <= 100.0


class TestRoundTrips:
    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), channels=st.sampled_from([2, 16, 64]),
           h_res=st.sampled_from([4, 256, 1024]))
    def test_project_unproject_identity(self, seed, channels, h_res):
        intr = SensorIntrinsics(channels=channels, h_res=h_res)
        img = random_image(np.random.default_rng(seed), intr)
        back = project(unproject(img), intr)
        np.testing.assert_array_equal(back.data, img.data)

    def test_unproject_point_count(self):
        img = random_image(np.random.default_rng(0), VLP16, density=0.3)
        cloud = unproject(img)
        assert len(cloud) == np.count_nonzero(img.data)
        assert cloud.ring.max() < 16
        assert np.linalg.norm(cloud.points, axis=1).max() <= 100.0 + 1e-6

    def test_unproject_single_pixel(self):
        data = np.zeros((16, 1024))
        data[0, 512] = 5.0
        cloud = unproject(RangeImage(VLP16, data))
        half_col = math.pi / 1024
        e = math.radians(15.0)
        np.testing.assert_allclose(
            cloud.points[0], [5 * math.cos(e) * math.cos(half_col), 5 * math.cos(e) * math.sin(half_col), 5 * math.sin(e)]
        )
        assert cloud.ring.tolist() == [0]

    def test_unproject_project_beam_aligned(self):
        intr = SensorIntrinsics(channels=64, h_res=1024)
        cloud, rows, cols, r = beam_aligned_cloud(np.random.default_rng(1), intr, 1000)
        img, dropped = project(cloud, intr, return_dropped=True)
        assert dropped == 0
        np.testing.assert_allclose(img.data[rows, cols], r, atol=1e-5, rtol=0)
        back = unproject(img)
        assert len(back) == 1000
        np.testing.assert_allclose(np.sort(np.linalg.norm(back.points, axis=1)), np.sort(r), atol=1e-5, rtol=0)

    def test_all_zero_image(self):
        assert len(unproject(RangeImage.zeros(VLP16))) == 0


class TestNormalize:
    def test_values(self):
        data = np.zeros((2, 4))
        data[0, :3] = [100.0, 25.0, 0.0]
        n = normalize(RangeImage(SensorIntrinsics(2, 4), data))
        assert n[0, 0] == 1.0 and n[0, 1] == 0.25 and n[0, 2] == 0.0
        assert n.dtype == np.float32

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_round_trip_within_float32(self, seed):
        img = random_image(np.random.default_rng(seed), SensorIntrinsics(8, 64))
        back = denormalize(normalize(img), img.intrinsics)
        np.testing.assert_allclose(back.data, img.data, rtol=2e-7)
        assert np.array_equal(back.data == 0, img.data == 0)


class TestSubsample:
    def test_keeps_every_fourth_row(self):
        img = random_image(np.random.default_rng(2), SensorIntrinsics(64, 32))
        low = subsample_rows(img, 4)
        assert low.shape == (16, 32)
        for i in range(16):
            assert np.array_equal(low.data[i], img.data[4 * i])

    def test_factor_eight(self):
        img = random_image(np.random.default_rng(2), SensorIntrinsics(64, 32))
        assert np.array_equal(subsample_rows(img, 8).data, img.data[0:64:8])

    def test_factor_one_identity(self):
        img = random_image(np.random.default_rng(2), SensorIntrinsics(64, 32))
        assert subsample_rows(img, 1) == img

    def test_non_divisor(self):
        with pytest.raises(ValueError):
            subsample_rows(RangeImage.zeros(SensorIntrinsics(64, 8)), 3)

    @pytest.mark.parametrize("factor", [2, 4, 8])
    def test_subsampled_beams_match_kept_rows(self, factor):
        intr = SensorIntrinsics(64, 8)
        low = subsample_intrinsics(intr, factor)
        np.testing.assert_allclose(beam_elevations(low), beam_elevations(intr)[::factor], atol=1e-11)
        assert upsample_intrinsics(low, factor) == intr


class TestPose:
    def test_yaw_then_pitch(self):
        p = Pose((1, 2, 3), yaw=math.pi / 2)
        np.testing.assert_allclose(p.to_world([[1.0, 0.0, 0.0]]), [[1.0, 3.0, 3.0]], atol=1e-12)
        p = Pose((0, 0, 0), pitch=-math.pi / 2)
        np.testing.assert_allclose(p.to_world([[1.0, 0.0, 0.0]]), [[0.0, 0.0, 1.0]], atol=1e-12)

    def test_rotation_is_orthonormal(self):
        r = Pose(yaw=0.3, pitch=-0.2, roll=1.1).rotation()
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0)

    def test_dict_round_trip(self):
        p = Pose((1.5, -2.0, 0.5), yaw=0.25, pitch=0.01, roll=-0.02)
        q = Pose.from_dict(p.to_dict())
        assert q.position == p.position
        assert q.yaw == pytest.approx(p.yaw, abs=1e-15)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            Pose((0, 0, 0), yaw=float("nan"))
