import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarsr import io
from lidarsr.geometry import PointCloud, Pose, RangeImage, SensorIntrinsics
from lidarsr.mapping import GridConfig, OccupancyParams, VoxelGrid
from lidarsr.nn.network import build_srnet
from lidarsr.nn.train import train
from lidarsr.sim.dataset import AugmentConfig, generate_dataset
from lidarsr.sim.worlds import office_scene, office_trajectory
from lidarsr.upscale import McConfig, uncertainty_filter

INTR = SensorIntrinsics(channels=8, h_res=32, v_fov_deg=26.8, v_center_deg=-1.5)


def random_scan(seed, intr=INTR):
    rng = np.random.default_rng(seed)
    data = rng.uniform(intr.min_range_m, intr.max_range_m, (intr.channels, intr.h_res))
    data[rng.random(data.shape) < 0.2] = 0
    return RangeImage(intr, data)


class TestScanFormat:
    def test_layout(self, tmp_path):
        img = random_scan(0)
        io.write_scan(tmp_path / "a.lsrs", img)
        buf = (tmp_path / "a.lsrs").read_bytes()
        assert buf[:4] == b"LSRS"
        assert struct.unpack_from("<III", buf, 4) == (1, 8, 32)
        np.testing.assert_array_equal(np.frombuffer(buf, "<f4", 8 * 32, 16).reshape(8, 32), img.data)
        tail = buf[16 + 4 * 256 :]
        assert len(tail) == 64
        assert json.loads(tail.rstrip(b"\0"))[:2] == [8, 32]

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), channels=st.integers(2, 64), h_res=st.sampled_from([4, 256, 1024]),
           fov=st.floats(1.0, 90.0), center=st.floats(-20.0, 20.0))
    def test_round_trip(self, tmp_path_factory, seed, channels, h_res, fov, center):
        intr = SensorIntrinsics(channels, h_res, fov, center)
        img = random_scan(seed, intr)
        path = tmp_path_factory.mktemp("s") / "x.lsrs"
        io.write_scan(path, img)
        back = io.read_scan(path)
        assert back.intrinsics == intr
        assert np.array_equal(back.data, img.data)

    def test_errors(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="missing.lsrs"):
            io.read_scan(tmp_path / "missing.lsrs")
        (tmp_path / "bad.lsrs").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(io.DataFormatError):
            io.read_scan(tmp_path / "bad.lsrs")
        io.write_scan(tmp_path / "t.lsrs", random_scan(1))
        buf = (tmp_path / "t.lsrs").read_bytes()
        (tmp_path / "t.lsrs").write_bytes(buf[:-10])
        with pytest.raises(io.DataFormatError, match="expected"):
            io.read_scan(tmp_path / "t.lsrs")
        io.write_lsrs_array(tmp_path / "neg.lsrs", -np.ones((8, 32)), INTR)
        with pytest.raises(io.DataFormatError):
            io.read_scan(tmp_path / "neg.lsrs")

    def test_pgm(self, tmp_path):
        data = np.zeros((2, 4))
        data[0, :3] = [1.2344, 99.9999, 0.5]
        io.write_pgm16(tmp_path / "a.pgm", RangeImage(SensorIntrinsics(2, 4), data))
        assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n4 2\n65535\n")
        mm = io.read_pgm16(tmp_path / "a.pgm")
        assert mm[0, :4].tolist() == [1234, 65535, 500, 0]

    def test_cloud_csv(self, tmp_path):
        io.write_cloud_csv(tmp_path / "c.csv", PointCloud([[1, 2, 3], [4, 5, 6]], [0, 7]))
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "x,y,z,ring" and lines[2].endswith(",7")


@pytest.fixture(scope="module")
def trained():
    spec = build_srnet(2, base_filters=2, levels=2)
    rng = np.random.default_rng(0)
    low = rng.uniform(0, 1, (4, 1, 2, 8)).astype(np.float32)
    high = rng.uniform(0, 1, (4, 1, 4, 8)).astype(np.float32)
    return spec, train(spec, low, high, epochs=2, batch=2), low, high


class TestModelFormat:
    def test_round_trip(self, tmp_path, trained):
        spec, state, _, _ = trained
        io.save_model(tmp_path / "m.lsrm", spec, state, {"note": "x"})
        spec2, state2, meta = io.load_model(tmp_path / "m.lsrm")
        assert spec2 == spec and meta == {"note": "x"}
        for k in state.params:
            for p in state.params[k]:
                assert np.array_equal(state.params[k][p], state2.params[k][p])
        assert state2.adam.step_count == state.adam.step_count
        for key in state.adam.m:
            assert np.array_equal(state.adam.m[key], state2.adam.m[key])
        assert state2.losses == state.losses and state2.epochs_done == 2

    def test_blob_header(self, tmp_path, trained):
        spec, state, _, _ = trained
        io.save_model(tmp_path / "m.lsrm", spec, state, include_optimizer=False)
        buf = (tmp_path / "m.lsrm").read_bytes()
        assert buf[:4] == b"LSRM" and struct.unpack_from("<I", buf, 4)[0] == 1
        side = json.loads((tmp_path / "m.lsrm.json").read_text())
        n = sum(int(np.prod(a["shape"])) for a in side["arrays"])
        assert len(buf) == 16 + 4 * n

    def test_resume_from_disk_continues_curve(self, tmp_path, trained):
        spec, state, low, high = trained
        io.save_model(tmp_path / "m.lsrm", spec, state)
        _, loaded, _ = io.load_model(tmp_path / "m.lsrm")
        resumed = train(spec, low, high, epochs=1, batch=2, state=loaded)
        direct = train(spec, low, high, epochs=3, batch=2)
        assert resumed.losses == direct.losses

    def test_corrupt(self, tmp_path, trained):
        spec, state, _, _ = trained
        io.save_model(tmp_path / "m.lsrm", spec, state)
        buf = (tmp_path / "m.lsrm").read_bytes()
        (tmp_path / "m.lsrm").write_bytes(buf + b"\0\0\0\0")
        with pytest.raises(io.DataFormatError, match="trailing"):
            io.load_model(tmp_path / "m.lsrm")
        (tmp_path / "m.lsrm").write_bytes(buf[:100])
        with pytest.raises(io.DataFormatError, match="truncated"):
            io.load_model(tmp_path / "m.lsrm")
        (tmp_path / "m.lsrm.json").write_text("{")
        with pytest.raises(io.DataFormatError):
            io.load_model(tmp_path / "m.lsrm")

    def test_loss_csv(self, tmp_path, trained):
        _, state, _, _ = trained
        io.write_loss_csv(tmp_path / "l.csv", state)
        lines = (tmp_path / "l.csv").read_text().splitlines()
        assert lines[0] == "epoch,lr,train_l1" and len(lines) == 3
        assert float(lines[1].split(",")[2]) == pytest.approx(state.losses[0])


class TestGridFormat:
    def test_round_trip(self, tmp_path):
        cfg = GridConfig((-1.5, 0.25, -0.1), 0.07, (9, 5, 4))
        g = VoxelGrid(cfg, OccupancyParams(l_max=3.0))
        rng = np.random.default_rng(0)
        g.log_odds[:] = rng.uniform(-2, 3, g.log_odds.size)
        g.touched[:] = rng.random(g.touched.size) < 0.5
        io.save_grid(tmp_path / "g.lsrg", g)
        h = io.load_grid(tmp_path / "g.lsrg")
        assert h.config == cfg and h.params == g.params
        assert np.array_equal(h.log_odds, g.log_odds) and np.array_equal(h.touched, g.touched)
        assert (tmp_path / "g.lsrg").read_bytes()[:4] == b"LSRG"

    def test_size_check(self, tmp_path):
        g = VoxelGrid(GridConfig((0, 0, 0), 0.1, (2, 2, 2)))
        io.save_grid(tmp_path / "g.lsrg", g)
        (tmp_path / "g.lsrg").write_bytes((tmp_path / "g.lsrg").read_bytes()[:-1])
        with pytest.raises(io.DataFormatError, match="dims"):
            io.load_grid(tmp_path / "g.lsrg")

    def test_occupied_csv(self, tmp_path):
        g = VoxelGrid(GridConfig((0, 0, 0), 0.1, (10, 10, 10)))
        g.integrate_scan(PointCloud([[0.9, 0, 0]], [0]), Pose((0.05, 0.05, 0.05)))
        assert io.write_occupied_csv(tmp_path / "o.csv", g) == 1
        lines = (tmp_path / "o.csv").read_text().splitlines()
        assert lines == ["x,y,z,p", "0.9500,0.0500,0.0500,0.700000"]


class TestDatasetFormat:
    def test_round_trip(self, tmp_path):
        pairs = generate_dataset(office_scene(), office_trajectory(3), SensorIntrinsics(16, 32), 4,
                                 AugmentConfig(multiplier=2))
        io.write_dataset(tmp_path / "d", pairs, {"seed": 0})
        back, manifest = io.load_dataset(tmp_path / "d")
        assert manifest["factor"] == 4 and manifest["seed"] == 0 and len(back) == 6
        for a, b in zip(pairs, back):
            assert a.low == b.low and a.high == b.high
            assert b.pose.position == pytest.approx(a.pose.position)
            assert b.pose.pitch == pytest.approx(a.pose.pitch, abs=1e-12)

    def test_manifest_errors(self, tmp_path):
        (tmp_path / "manifest.json").write_text('{"factor": 4,\n "pairs": [}')
        with pytest.raises(io.DataFormatError, match="line 2"):
            io.read_manifest(tmp_path)
        (tmp_path / "manifest.json").write_text('{"factor": 4, "pairs": []}')
        with pytest.raises(io.DataFormatError, match="intrinsics"):
            io.read_manifest(tmp_path)

    def test_poses(self, tmp_path):
        poses = [Pose((1.0, 2.0, 0.5), yaw=0.3), Pose((0.0, -1.0, 1.8), yaw=-2.0, pitch=0.01)]
        io.save_poses(tmp_path / "p.json", poses)
        back = io.load_poses(tmp_path / "p.json")
        assert [p.position for p in back] == [p.position for p in poses]
        assert back[1].yaw == pytest.approx(-2.0, abs=1e-12)
        (tmp_path / "bad.json").write_text('[{"yaw_deg": 3}]')
        with pytest.raises(io.DataFormatError, match="bad pose"):
            io.load_poses(tmp_path / "bad.json")

    def test_mc_result(self, tmp_path):
        passes = np.random.default_rng(0).uniform(0.1, 0.2, (5, 8, 32))
        res = uncertainty_filter(passes, 0.03)
        summary = io.write_mc_result(tmp_path, "s", res, INTR, McConfig(T=5))
        mean, intr = io.read_lsrs_array(tmp_path / "s_mean.lsrs")
        np.testing.assert_allclose(mean, res.mean * 100.0, rtol=1e-6)
        assert intr == INTR
        on_disk = json.loads((tmp_path / "s_summary.json").read_text())
        assert on_disk == summary and on_disk["T"] == 5 and on_disk["lambda"] == 0.03
        assert on_disk["removed_fraction"] == res.removed_fraction
