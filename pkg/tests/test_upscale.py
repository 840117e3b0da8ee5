import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarsr.geometry import RangeImage, SensorIntrinsics, normalize, project, subsample_rows, unproject
from lidarsr.nn.network import build_srnet, init_params
from lidarsr.rng import stream
from lidarsr.sim.lidar import raycast_scan
from lidarsr.sim.scene import Box, GroundPlane, Scene
from lidarsr.geometry import Pose
from lidarsr.upscale import (
    CubicUpscaler,
    LinearUpscaler,
    McConfig,
    NeuralUpscaler,
    TruthUpscaler,
    catmull_rom,
    mc_infer,
    mc_passes,
    uncertainty_filter,
    upscale_cubic,
    upscale_linear,
    upscale_pipeline,
    upscale_scan,
)


def column(values):
    return np.asarray(values, np.float32)[:, None]


def cr_oracle(p0, p1, p2, p3, t):
    """Catmull-Rom through the tangent form: Hermite basis with m = (p_{i+1} - p_{i-1}) / 2."""
    m1, m2 = (p2 - p0) / 2, (p3 - p1) / 2
    h00, h10 = 2 * t**3 - 3 * t**2 + 1, t**3 - 2 * t**2 + t
    h01, h11 = -2 * t**3 + 3 * t**2, t**3 - t**2
    return h00 * p1 + h10 * m1 + h01 * p2 + h11 * m2


class TestLinear:
    def test_ramp(self):
        out = upscale_linear(column([2.0, 6.0]), 4)[:, 0]
        np.testing.assert_array_equal(out[:5], [2.0, 3.0, 4.0, 5.0, 6.0])

    def test_bottom_rows_replicate(self):
        out = upscale_linear(column([2.0, 6.0]), 4)[:, 0]
        np.testing.assert_array_equal(out[4:], 6.0)

    def test_invalid_anchor_zeroes_span(self):
        out = upscale_linear(column([0.5, 0.0, 0.7]), 2)[:, 0]
        np.testing.assert_array_equal(out, np.float32([0.5, 0.0, 0.0, 0.0, 0.7, 0.7]))

    def test_constant(self):
        out = upscale_linear(np.full((4, 7), 0.3, np.float32), 8)
        assert out.shape == (32, 7)
        np.testing.assert_array_equal(out, np.float32(0.3))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), factor=st.sampled_from([2, 4, 8]))
    def test_exact_on_affine_columns(self, seed, factor):
        rng = np.random.default_rng(seed)
        rows, cols = 8, 5
        a, b = rng.uniform(0.2, 0.4, cols), rng.uniform(-0.02, 0.02, cols)
        high = a + b * np.arange(rows * factor)[:, None]
        low = high[::factor].astype(np.float32)
        out = upscale_linear(low, factor)
        k = (rows - 1) * factor + 1  # rows covered by a valid span
        np.testing.assert_allclose(out[:k], high[:k], atol=1e-6)

    def test_anchor_rows_reproduced(self):
        low = np.random.default_rng(0).uniform(0, 1, (16, 9)).astype(np.float32)
        for f in (2, 4, 8):
            np.testing.assert_array_equal(upscale_linear(low, f)[::f], low)

    def test_bad_factor(self):
        with pytest.raises(ValueError):
            upscale_linear(column([1.0]), 3)


class TestCubic:
    def test_fixture(self):
        assert catmull_rom(0.0, 0.0, 1.0, 0.0, 0.5) == pytest.approx(0.5625, abs=1e-12)
        assert cr_oracle(0.0, 0.0, 1.0, 0.0, 0.5) == pytest.approx(0.5625, abs=1e-12)

    def test_linear_data(self):
        assert catmull_rom(0.0, 1.0, 2.0, 3.0, 0.5) == pytest.approx(1.5)
        out = upscale_cubic(column([0.1, 0.2, 0.3, 0.4]), 2)[:, 0]
        np.testing.assert_allclose(out[2:5], [0.2, 0.25, 0.3], atol=1e-7)

    def test_fixture_through_upscaler(self):
        # anchors 0.1, 0.1, 0.2, 0.1 shift the 0,0,1,0 case by 0.1 and scale it by 0.1
        out = upscale_cubic(column([0.1, 0.1, 0.2, 0.1]), 2)[:, 0]
        assert out[3] == pytest.approx(0.1 + 0.1 * 0.5625, abs=1e-7)

    def test_constant(self):
        np.testing.assert_allclose(upscale_cubic(np.full((5, 3), 0.6, np.float32), 4), 0.6, rtol=1e-7)

    def test_closed_form_random_anchors(self):
        rng = np.random.default_rng(11)
        p = rng.uniform(-1, 1, (4, 10_000))
        t = rng.uniform(0, 1, 10_000)
        np.testing.assert_allclose(catmull_rom(*p, t), cr_oracle(*p, t), atol=1e-6, rtol=0)

    def test_upscaler_matches_closed_form(self):
        rng = np.random.default_rng(12)
        low = rng.uniform(0.1, 0.9, (16, 64)).astype(np.float32)
        out = upscale_cubic(low, 4).astype(np.float64)
        lo = low.astype(np.float64)
        for r in range(4 * 15):
            k, t = divmod(r, 4)
            p0, p3 = lo[max(k - 1, 0)], lo[min(k + 2, 15)]
            np.testing.assert_allclose(out[r], cr_oracle(p0, lo[k], lo[k + 1], p3, t / 4), atol=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), factor=st.sampled_from([2, 4, 8]))
    def test_exact_on_affine_columns(self, seed, factor):
        rng = np.random.default_rng(seed)
        rows = 8
        a, b = rng.uniform(0.2, 0.4, 6), rng.uniform(-0.02, 0.02, 6)
        high = a + b * np.arange(rows * factor)[:, None]
        out = upscale_cubic(high[::factor].astype(np.float32), factor)
        # spans with four genuine anchors; the edge spans use replicated anchors
        inner = slice(factor, (rows - 2) * factor + 1)
        np.testing.assert_allclose(out[inner], high[inner], atol=1e-6)

    def test_invalid_propagation(self):
        out = upscale_cubic(column([0.5, 0.0, 0.7, 0.8]), 2)[:, 0]
        np.testing.assert_array_equal(out[1:4], 0.0)
        assert out[0] == np.float32(0.5)


@pytest.mark.parametrize("up", [LinearUpscaler(2), CubicUpscaler(4), LinearUpscaler(8)])
def test_shape_contract(up):
    low = np.random.default_rng(0).uniform(0, 1, (8, 12)).astype(np.float32)
    assert up(low).image.shape == (8 * up.factor, 12)


class TestUncertaintyFilter:
    def test_kept_fixture(self):
        res = uncertainty_filter(np.array([10.0, 10.1, 9.9, 10.05, 9.95]).reshape(5, 1, 1), 0.03)
        assert res.mean[0, 0] == pytest.approx(10.0)
        assert res.std[0, 0] == pytest.approx(math.sqrt(0.025 / 5), rel=1e-9)
        assert res.std[0, 0] == pytest.approx(0.0707, abs=1e-4)
        assert res.final[0, 0] == res.mean[0, 0]
        assert res.removed_fraction == 0.0

    def test_removed_fixture(self):
        res = uncertainty_filter(np.array([10.0, 20, 10, 20, 10]).reshape(5, 1, 1), 0.03)
        assert res.mean[0, 0] == 14.0
        assert res.std[0, 0] == pytest.approx(math.sqrt(24.0), rel=1e-12)
        assert res.final[0, 0] == 0.0
        assert res.removed_fraction == 100.0

    def test_removed_over_positive_means(self):
        passes = np.zeros((3, 1, 3))
        passes[:, 0, 1] = [1.0, 1.0, 1.0]
        passes[:, 0, 2] = [1.0, 2.0, 3.0]
        assert uncertainty_filter(passes, 0.03).removed_fraction == 50.0

    def test_huge_lambda_keeps_everything(self):
        passes = np.random.default_rng(0).uniform(0.1, 1, (7, 4, 5))
        res = uncertainty_filter(passes, 1e6)
        assert res.removed_fraction == 0.0
        np.testing.assert_array_equal(res.final, res.mean)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), lam=st.floats(1e-4, 1.0), extra=st.floats(0.0, 1.0))
    def test_properties(self, seed, lam, extra):
        passes = np.random.default_rng(seed).uniform(0.0, 1.0, (5, 6, 7))
        a = uncertainty_filter(passes, lam)
        b = uncertainty_filter(passes, lam + extra)
        assert np.all((a.final == 0) | (a.final == a.mean))
        assert np.all(a.std >= 0) and 0 <= a.removed_fraction <= 100
        kept_a, kept_b = a.final != 0, b.final != 0
        assert np.all(kept_b[kept_a])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            McConfig(T=0)
        with pytest.raises(ValueError):
            McConfig(lam=0.0)


@pytest.fixture(scope="module")
def small_net():
    spec = build_srnet(2, base_filters=2, dropout_rate=0.25, levels=2)
    params = init_params(spec, stream(7))
    low = np.random.default_rng(1).uniform(0.05, 0.5, (4, 16)).astype(np.float32)
    return spec, params, low


class TestMcInference:
    @pytest.mark.parametrize("T", [1, 3, 10])
    def test_zero_rate_is_degenerate(self, small_net, T):
        spec, params, low = small_net
        res = mc_infer(low, spec, params, McConfig(T=T, dropout_rate=0.0))
        assert not res.std.any()
        assert res.removed_fraction == 0.0
        pos = res.mean > 0
        np.testing.assert_array_equal(res.final[pos], res.mean[pos])

    def test_zero_rate_invariant_in_T(self, small_net):
        spec, params, low = small_net
        a = mc_infer(low, spec, params, McConfig(T=1, dropout_rate=0.0))
        b = mc_infer(low, spec, params, McConfig(T=7, dropout_rate=0.0, chunk=3))
        np.testing.assert_array_equal(a.mean, b.mean)

    def test_active_dropout_varies(self, small_net):
        spec, params, low = small_net
        passes = mc_passes(low, spec, params, McConfig(T=4))
        assert passes.shape == (4, 8, 16)
        assert not np.array_equal(passes[0], passes[1])

    def test_chunking_does_not_change_result(self, small_net):
        spec, params, low = small_net
        a = mc_passes(low, spec, params, McConfig(T=6, chunk=1))
        b = mc_passes(low, spec, params, McConfig(T=6, chunk=4))
        np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-7)

    def test_seeded(self, small_net):
        spec, params, low = small_net
        a = mc_passes(low, spec, params, McConfig(T=3, seed=5))
        b = mc_passes(low, spec, params, McConfig(T=3, seed=5))
        c = mc_passes(low, spec, params, McConfig(T=3, seed=6))
        assert np.array_equal(a, b) and not np.array_equal(a, c)

    def test_neural_upscaler_returns_filtered(self, small_net):
        spec, params, low = small_net
        out = NeuralUpscaler(spec, params, McConfig(T=5))(low)
        assert out.mc is not None
        np.testing.assert_array_equal(out.image, out.mc.final.astype(np.float32))
        assert NeuralUpscaler(spec, params)(low).mc is None


WALL_INTR = SensorIntrinsics(channels=64, h_res=256)


def wall_scene():
    return Scene([GroundPlane(0.0), Box([6.0, -20.0, 0.0], [6.5, 20.0, 4.0]), Box([-9.0, -3.0, 0.0], [-8.0, 3.0, 2.5])])


class TestPipeline:
    def test_zero_scan_gives_empty_cloud(self):
        low = RangeImage.zeros(SensorIntrinsics(16, 64))
        assert len(upscale_pipeline(low, LinearUpscaler(4))) == 0

    def test_perfect_upscaler_reproduces_truth(self):
        high = raycast_scan(wall_scene(), Pose((0.0, 0.0, 1.0)), WALL_INTR)
        low = subsample_rows(high, 4)
        truth = normalize(high)
        cloud = upscale_pipeline(low, TruthUpscaler(4, lambda _: truth))
        ref = unproject(high)
        assert len(cloud) == len(ref) > 1000
        np.testing.assert_allclose(cloud.points, ref.points, atol=1e-4, rtol=0)
        np.testing.assert_allclose(project(cloud, WALL_INTR).data, high.data, rtol=1e-6)

    def test_clamps_and_drops(self):
        low = RangeImage(SensorIntrinsics(2, 4), np.full((2, 4), 50.0))
        img, _ = upscale_scan(low, TruthUpscaler(2, lambda x: np.array([[1.5] * 4, [0.001] * 4, [-0.2] * 4, [0.5] * 4])))
        np.testing.assert_array_equal(img.data[:, 0], [100.0, 0.0, 0.0, 50.0])

    def test_wrong_shape_rejected(self):
        low = RangeImage.zeros(SensorIntrinsics(2, 4))
        with pytest.raises(ValueError, match="expected"):
            upscale_scan(low, TruthUpscaler(2, lambda x: np.zeros((3, 4))))
