"""Pipeline configuration: nested dataclasses, JSON files and ``key=value`` overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class SensorSection:
    channels: int = 64
    h_res: int = 256
    v_fov_deg: float = 30.0
    v_center_deg: float = 0.0
    max_range_m: float = 100.0
    min_range_m: float = 0.3


@dataclass
class AugmentSection:
    flip_topdown: float = 0.5
    flip_horizontal: float = 0.5
    # 0 disables shifting; anything >= h_res allows every rotation
    shift_cols: int = 1 << 30
    range_scale: tuple = (0.85, 1.15)
    multiplier: int = 2
    attitude_jitter_deg: float = 3.0

    def __post_init__(self):
        self.range_scale = tuple(self.range_scale)


@dataclass
class CorpusSection:
    """Training scans from procedurally generated towns and rooms."""

    worlds: int = 32
    poses_per_world: int = 4


@dataclass
class NetSection:
    base_filters: int = 8
    dropout: float = 0.25
    epochs: int = 20
    batch: int = 8
    lr: float = 1e-4
    decay: float = 1e-5


@dataclass
class McSection:
    T: int = 50
    lam: float = 0.03
    chunk: int = 10


@dataclass
class EvalSection:
    # "office" and "town" are built in; otherwise scene/trajectory JSON paths are used
    scene: str = "office"
    scene_path: str | None = None
    trajectory_path: str | None = None
    scans: int = 25
    resolution: float = 0.05
    # grid bounds [[x0, y0, z0], [x1, y1, z1]]; None uses the built-in scene's extent
    bounds: list | None = None
    methods: list = field(default_factory=lambda: ["baseline", "linear", "cubic", "nn", "nn-mc"])


@dataclass
class PipelineConfig:
    factor: int = 4
    seed: int = 0
    sensor: SensorSection = field(default_factory=SensorSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    corpus: CorpusSection = field(default_factory=CorpusSection)
    net: NetSection = field(default_factory=NetSection)
    mc: McSection = field(default_factory=McSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> "PipelineConfig":
        if self.factor not in (2, 4, 8):
            raise ConfigError(f"factor must be 2, 4 or 8, got {self.factor}")
        if self.sensor.channels % self.factor:
            raise ConfigError(f"{self.sensor.channels} channels not divisible by factor {self.factor}")
        if self.mc.T < 1 or self.mc.lam <= 0:
            raise ConfigError("mc.T must be >= 1 and mc.lam > 0")
        if not 0 <= self.net.dropout < 1:
            raise ConfigError("net.dropout must be in [0, 1)")
        if self.net.epochs < 0 or self.net.batch < 1:
            raise ConfigError("net.epochs must be >= 0 and net.batch >= 1")
        for m in self.eval.methods:
            if m not in ("baseline", "linear", "cubic", "nn", "nn-mc"):
                raise ConfigError(f"unknown method {m!r}")
        try:
            self.intrinsics()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        return self

    def intrinsics(self):
        from lidarsr.geometry import SensorIntrinsics

        return SensorIntrinsics(**dataclasses.asdict(self.sensor))

    def augment_config(self):
        from lidarsr.sim.dataset import AugmentConfig

        return AugmentConfig(**{**dataclasses.asdict(self.augment),
                                "range_scale": tuple(self.augment.range_scale)}, seed=self.seed)

    def mc_config(self):
        from lidarsr.upscale import McConfig

        return McConfig(T=self.mc.T, lam=self.mc.lam, seed=self.seed, chunk=self.mc.chunk)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def full_scale(cls) -> "PipelineConfig":
        cfg = cls()
        cfg.sensor.h_res = 1024
        cfg.net.base_filters = 32
        return cfg


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in data.items():
        if k not in names:
            raise ConfigError(f"unknown config key '{where}{k}'")
        default = getattr(cls(), k)
        if dataclasses.is_dataclass(default):
            kwargs[k] = _build(type(default), v, f"{where}{k}.")
        else:
            kwargs[k] = v
    return cls(**kwargs)


def config_from_dict(data: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    merged = _merge((base or PipelineConfig()).to_dict(), data)
    return _build(PipelineConfig, merged, "").validate()


def _merge(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = _merge(a[k], v) if isinstance(v, dict) and isinstance(a.get(k), dict) else v
    return out


def load_config(path, base: PipelineConfig | None = None) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    return config_from_dict(data, base)


def parse_override(text: str) -> tuple[list[str], object]:
    """``a.b=value``; the value is parsed as JSON when possible, else kept as a string."""
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(cfg: PipelineConfig, overrides) -> PipelineConfig:
    data = cfg.to_dict()
    for text in overrides:
        keys, value = parse_override(text)
        node = data
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                raise ConfigError(f"unknown config section '{k}' in {text!r}")
            node = node[k]
        if keys[-1] not in node:
            raise ConfigError(f"unknown config key {'.'.join(keys)!r}")
        node[keys[-1]] = value
    return config_from_dict(data, PipelineConfig())


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
