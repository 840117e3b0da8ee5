"""Binary and text file formats: scans, models, grids, manifests and CSV tables."""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from lidarsr.geometry import PointCloud, Pose, RangeImage, SensorIntrinsics
from lidarsr.mapping import OCCUPIED, GridConfig, OccupancyParams, VoxelGrid
from lidarsr.nn.network import TRAINABLE, NetworkSpec, iter_arrays
from lidarsr.nn.optim import Adam
from lidarsr.nn.train import TrainState

SCAN_MAGIC = b"LSRS"
MODEL_MAGIC = b"LSRM"
GRID_MAGIC = b"LSRG"
FORMAT_VERSION = 1
INTRINSICS_BYTES = 64


class DataFormatError(ValueError):
    """A file exists but its contents are not in the expected format."""


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return path.read_bytes()


def _check_header(buf: bytes, magic: bytes, path) -> None:
    if len(buf) < 8 or buf[:4] != magic:
        raise DataFormatError(f"{path}: not a {magic.decode()} file")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported {magic.decode()} version {version}")


def _num(v: float):
    return int(v) if float(v).is_integer() else float(v)


# --- scans -----------------------------------------------------------------


def encode_intrinsics(intr: SensorIntrinsics) -> bytes:
    """Compact JSON array [channels, h_res, v_fov, v_center, max_range, min_range],
    zero-padded to 64 bytes."""
    vals = [intr.channels, intr.h_res, _num(intr.v_fov_deg), _num(intr.v_center_deg),
            _num(intr.max_range_m), _num(intr.min_range_m)]
    raw = json.dumps(vals, separators=(",", ":")).encode()
    if len(raw) > INTRINSICS_BYTES:
        raise ValueError(f"intrinsics do not fit in {INTRINSICS_BYTES} bytes: {raw!r}")
    return raw.ljust(INTRINSICS_BYTES, b"\0")


def decode_intrinsics(raw: bytes) -> SensorIntrinsics:
    try:
        c, w, fov, center, rmax, rmin = json.loads(raw.rstrip(b"\0").decode())
        return SensorIntrinsics(int(c), int(w), float(fov), float(center), float(rmax), float(rmin))
    except (ValueError, TypeError) as e:
        raise DataFormatError(f"bad intrinsics block {raw!r}: {e}") from None


def write_lsrs_array(path, data: np.ndarray, intr: SensorIntrinsics) -> None:
    """Write any (rows, cols) float array with intrinsics; no range validation."""
    data = np.ascontiguousarray(data, dtype="<f4")
    rows, cols = data.shape
    header = SCAN_MAGIC + struct.pack("<III", FORMAT_VERSION, rows, cols)
    Path(path).write_bytes(header + data.tobytes() + encode_intrinsics(intr))


def read_lsrs_array(path) -> tuple[np.ndarray, SensorIntrinsics]:
    buf = _read_bytes(path)
    _check_header(buf, SCAN_MAGIC, path)
    if len(buf) < 16:
        raise DataFormatError(f"{path}: truncated header")
    rows, cols = struct.unpack_from("<II", buf, 8)
    n = 16 + 4 * rows * cols
    if len(buf) != n + INTRINSICS_BYTES:
        raise DataFormatError(f"{path}: expected {n + INTRINSICS_BYTES} bytes for {rows}x{cols}, got {len(buf)}")
    data = np.frombuffer(buf, "<f4", rows * cols, 16).reshape(rows, cols).astype(np.float32)
    return data, decode_intrinsics(buf[n:])


def write_scan(path, img: RangeImage) -> None:
    write_lsrs_array(path, img.data, img.intrinsics)


def read_scan(path) -> RangeImage:
    data, intr = read_lsrs_array(path)
    try:
        return RangeImage(intr, data)
    except ValueError as e:
        raise DataFormatError(f"{path}: {e}") from None


def write_pgm16(path, img: RangeImage) -> None:
    """Binary 16-bit PGM of ranges in millimeters, clamped to 65535."""
    mm = np.clip(np.rint(img.data.astype(np.float64) * 1000.0), 0, 65535).astype(">u2")
    rows, cols = img.shape
    Path(path).write_bytes(f"P5\n{cols} {rows}\n65535\n".encode() + mm.tobytes())


def read_pgm16(path) -> np.ndarray:
    buf = _read_bytes(path)
    parts = buf.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"65535":
        raise DataFormatError(f"{path}: not a 16-bit binary PGM")
    cols, rows = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], ">u2", rows * cols).reshape(rows, cols).astype(np.uint16)


def write_cloud_csv(path, cloud: PointCloud) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "z", "ring"])
        for (x, y, z), r in zip(cloud.points, cloud.ring):
            w.writerow([f"{x:.6f}", f"{y:.6f}", f"{z:.6f}", int(r)])


# --- models ----------------------------------------------------------------


def model_paths(path) -> tuple[Path, Path]:
    """(blob, JSON sidecar) for a model path; the sidecar is ``<path>.json``."""
    path = Path(path)
    return path, path.with_name(path.name + ".json")


def save_model(path, spec: NetworkSpec, state: TrainState, meta: dict | None = None,
               include_optimizer: bool = True) -> None:
    """Blob: magic, u32 version, u32 array count, then every array as f32 LE in
    spec order, followed by the Adam moments when ``include_optimizer``."""
    blob_path, side_path = model_paths(path)
    entries, chunks = [], []
    for layer, pname, arr in iter_arrays(spec, state.params):
        entries.append({"layer": layer, "param": pname, "shape": list(arr.shape)})
        chunks.append(np.ascontiguousarray(arr, "<f4").tobytes())
    adam = state.adam
    has_moments = include_optimizer and bool(adam.m)
    if has_moments:
        for e in entries:
            if e["param"] in TRAINABLE:
                key = (e["layer"], e["param"])
                chunks.append(np.ascontiguousarray(adam.m[key], "<f4").tobytes())
                chunks.append(np.ascontiguousarray(adam.v[key], "<f4").tobytes())
    header = MODEL_MAGIC + struct.pack("<III", FORMAT_VERSION, len(entries), int(has_moments))
    blob_path.write_bytes(header + b"".join(chunks))
    side = {
        "format": "LSRM",
        "version": FORMAT_VERSION,
        "spec": spec.to_dict(),
        "arrays": entries,
        "optimizer": {
            "lr": adam.lr, "decay": adam.decay, "beta1": adam.beta1, "beta2": adam.beta2,
            "eps": adam.eps, "step_count": adam.step_count, "moments": has_moments,
        },
        "training": {"epochs_done": state.epochs_done, "losses": state.losses, "lrs": state.lrs},
        "meta": meta or {},
    }
    side_path.write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")


def load_model(path) -> tuple[NetworkSpec, TrainState, dict]:
    blob_path, side_path = model_paths(path)
    buf = _read_bytes(blob_path)
    try:
        side = json.loads(_read_bytes(side_path))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{side_path}: {e}") from None
    _check_header(buf, MODEL_MAGIC, blob_path)
    n_arrays, has_moments = struct.unpack_from("<II", buf, 8)
    try:
        spec = NetworkSpec.from_dict(side["spec"])
        entries = side["arrays"]
        opt = side["optimizer"]
        tr = side["training"]
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"{side_path}: {e}") from None
    if n_arrays != len(entries):
        raise DataFormatError(f"{blob_path}: {n_arrays} arrays but sidecar lists {len(entries)}")
    off = 16

    def take(shape):
        nonlocal off
        n = int(np.prod(shape))
        if off + 4 * n > len(buf):
            raise DataFormatError(f"{blob_path}: truncated")
        a = np.frombuffer(buf, "<f4", n, off).reshape(shape).astype(np.float32)
        off += 4 * n
        return a

    params = {}
    for e in entries:
        params.setdefault(e["layer"], {})[e["param"]] = take(tuple(e["shape"]))
    adam = Adam(lr=opt["lr"], decay=opt["decay"], beta1=opt["beta1"], beta2=opt["beta2"], eps=opt["eps"])
    adam.step_count = int(opt["step_count"])
    if has_moments:
        adam.m, adam.v = {}, {}
        for e in entries:
            if e["param"] in TRAINABLE:
                key = (e["layer"], e["param"])
                adam.m[key] = take(tuple(e["shape"]))
                adam.v[key] = take(tuple(e["shape"]))
    if off != len(buf):
        raise DataFormatError(f"{blob_path}: {len(buf) - off} trailing bytes")
    expected = [(l, p) for l, p, _ in iter_arrays(spec, params)]
    if expected != [(e["layer"], e["param"]) for e in entries]:
        raise DataFormatError(f"{side_path}: arrays do not follow the network layout")
    state = TrainState(params, adam, int(tr["epochs_done"]), list(tr["losses"]), list(tr["lrs"]))
    return spec, state, side.get("meta", {})


def write_loss_csv(path, state: TrainState) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lr", "train_l1"])
        for e, (lr, loss) in enumerate(zip(state.lrs, state.losses)):
            w.writerow([e, f"{lr:.9g}", f"{loss:.9g}"])


# --- grids -----------------------------------------------------------------

_GRID_HEADER = struct.Struct("<4sIIII4d5d")


def save_grid(path, grid: VoxelGrid) -> None:
    """Header (magic, version, dims, origin, resolution, occupancy params),
    f32 LE log-odds in x-major order, then one byte per voxel for ``touched``."""
    c, p = grid.config, grid.params
    header = _GRID_HEADER.pack(GRID_MAGIC, FORMAT_VERSION, *c.dims, *c.origin, c.resolution,
                               p.l_hit, p.l_miss, p.l_min, p.l_max, p.delta)
    Path(path).write_bytes(header + grid.log_odds.astype("<f4").tobytes()
                           + grid.touched.astype(np.uint8).tobytes())


def load_grid(path) -> VoxelGrid:
    buf = _read_bytes(path)
    _check_header(buf, GRID_MAGIC, path)
    if len(buf) < _GRID_HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    _, _, nx, ny, nz, ox, oy, oz, res, lh, lm, lmin, lmax, delta = _GRID_HEADER.unpack_from(buf)
    n = nx * ny * nz
    if len(buf) != _GRID_HEADER.size + 5 * n:
        raise DataFormatError(f"{path}: size does not match dims {(nx, ny, nz)}")
    off = _GRID_HEADER.size
    log_odds = np.frombuffer(buf, "<f4", n, off).astype(np.float32)
    touched = np.frombuffer(buf, np.uint8, n, off + 4 * n).astype(bool)
    try:
        cfg = GridConfig((ox, oy, oz), res, (nx, ny, nz))
        params = OccupancyParams(lh, lm, lmin, lmax, delta)
    except ValueError as e:
        raise DataFormatError(f"{path}: {e}") from None
    return VoxelGrid(cfg, params, log_odds, touched)


def write_occupied_csv(path, grid: VoxelGrid) -> int:
    """x, y, z (voxel centers) and p of every occupied voxel; returns the count."""
    flat = np.nonzero(grid.states() == OCCUPIED)[0]
    xyz = grid.voxel_centers(flat)
    p = grid.probabilities()[flat]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "z", "p"])
        for (x, y, z), pv in zip(xyz, p):
            w.writerow([f"{x:.4f}", f"{y:.4f}", f"{z:.4f}", f"{pv:.6f}"])
    return len(flat)


# --- datasets and poses ----------------------------------------------------


def write_dataset(out_dir, pairs, extra: dict | None = None) -> Path:
    """LSRS files under ``out_dir/scans`` and ``out_dir/manifest.json`` with relative paths."""
    out = Path(out_dir)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    if not pairs:
        raise ValueError("no pairs to write")
    records = []
    for i, p in enumerate(pairs):
        low, high = f"scans/{i:05d}_low.lsrs", f"scans/{i:05d}_high.lsrs"
        write_scan(out / low, p.low)
        write_scan(out / high, p.high)
        records.append({"low_path": low, "high_path": high, "pose": p.pose.to_dict()})
    manifest = {"intrinsics": pairs[0].high.intrinsics.to_dict(), "factor": pairs[0].factor,
                "pairs": records, **(extra or {})}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        m = json.loads(_read_bytes(path))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    for key in ("intrinsics", "factor", "pairs"):
        if key not in m:
            raise DataFormatError(f"{path}: missing field '{key}'")
    m["_root"] = str(path.parent)
    return m


def load_dataset(path):
    """ScanPairs listed in a manifest (directory or manifest path)."""
    from lidarsr.sim.dataset import ScanPair

    m = read_manifest(path)
    root = Path(m["_root"])
    pairs = []
    for i, rec in enumerate(m["pairs"]):
        try:
            low, high = read_scan(root / rec["low_path"]), read_scan(root / rec["high_path"])
            pose = Pose.from_dict(rec["pose"])
        except KeyError as e:
            raise DataFormatError(f"{path}: pair #{i} missing field {e}") from None
        pairs.append(ScanPair(low, high, pose, int(m["factor"])))
    return pairs, m


def load_poses(path) -> list[Pose]:
    """Poses from a JSON list of pose records (same schema as trajectories)."""
    try:
        recs = json.loads(_read_bytes(path))
        return [Pose.from_dict(r) for r in recs]
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"{path}: bad pose record: {e}") from None


def save_poses(path, poses) -> None:
    Path(path).write_text(json.dumps([p.to_dict() for p in poses], indent=1) + "\n")


def write_mc_result(out_dir, stem: str, result, intr: SensorIntrinsics, cfg) -> dict:
    """mean/std/final as LSRS in meters plus a JSON summary."""
    out = Path(out_dir)
    scale = intr.max_range_m
    write_lsrs_array(out / f"{stem}_mean.lsrs", np.asarray(result.mean) * scale, intr)
    write_lsrs_array(out / f"{stem}_std.lsrs", np.asarray(result.std) * scale, intr)
    write_lsrs_array(out / f"{stem}_final.lsrs", np.asarray(result.final) * scale, intr)
    summary = {"T": cfg.T, "lambda": cfg.lam, "removed_fraction": result.removed_fraction,
               "dropout_rate": cfg.dropout_rate, "seed": cfg.seed}
    (out / f"{stem}_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary


def is_finite_state(state: TrainState) -> bool:
    return all(np.all(np.isfinite(a)) for p in state.params.values() for a in p.values()) and all(
        math.isfinite(v) for v in state.losses)

