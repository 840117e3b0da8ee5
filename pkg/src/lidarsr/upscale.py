"""Row upscalers for normalized range images and Monte-Carlo dropout filtering.

Low-res row ``k`` always lands on high-res row ``k * factor`` so anchors
reproduce the rows that ``subsample_rows`` kept.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from lidarsr.geometry import (
    PointCloud,
    RangeImage,
    denormalize,
    normalize,
    unproject,
    upsample_intrinsics,
)
from lidarsr.nn.network import Dropout, Network, NetworkSpec
from lidarsr.rng import stream

VALID_FACTORS = (2, 4, 8)


def _check_factor(factor):
    if factor not in VALID_FACTORS:
        raise ValueError(f"factor must be one of {VALID_FACTORS}, got {factor}")


def _span_indices(rows: int, factor: int):
    """For each output row: left anchor k, right anchor k+1 (clipped), fraction t."""
    out = np.arange(rows * factor)
    k = out // factor
    t = (out % factor) / factor
    below = k >= rows - 1
    t = np.where(below, 0.0, t)
    return k, np.minimum(k + 1, rows - 1), t


def upscale_linear(low: np.ndarray, factor: int) -> np.ndarray:
    """Per-column linear interpolation between anchors.

    Rows below the last anchor repeat it; a span with a 0 anchor is all 0.
    """
    _check_factor(factor)
    low = np.asarray(low, np.float32)
    k0, k1, t = _span_indices(low.shape[0], factor)
    p1, p2 = low[k0].astype(np.float64), low[k1].astype(np.float64)
    tt = t[:, None]
    out = (1.0 - tt) * p1 + tt * p2
    invalid = (p1 == 0) | ((tt > 0) & (p2 == 0))
    return np.where(invalid, 0.0, out).astype(np.float32)


def catmull_rom(p0, p1, p2, p3, t):
    """Catmull-Rom spline between p1 (t=0) and p2 (t=1)."""
    t2 = t * t
    t3 = t2 * t
    return 0.5 * (
        2.0 * p1
        + (-p0 + p2) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3
    )


def upscale_cubic(low: np.ndarray, factor: int) -> np.ndarray:
    """Per-column Catmull-Rom interpolation with replicated edge anchors.

    Same span rule as :func:`upscale_linear`. An invalid outer anchor (p0 or
    p3) is replaced by its neighbouring span anchor, as at the image edges.
    """
    _check_factor(factor)
    low = np.asarray(low, np.float32).astype(np.float64)
    rows = low.shape[0]
    k1, k2, t = _span_indices(rows, factor)
    k0 = np.maximum(k1 - 1, 0)
    k3 = np.minimum(k2 + 1, rows - 1)
    p0, p1, p2, p3 = low[k0], low[k1], low[k2], low[k3]
    p0 = np.where(p0 == 0, p1, p0)
    p3 = np.where(p3 == 0, p2, p3)
    tt = t[:, None]
    out = catmull_rom(p0, p1, p2, p3, tt)
    invalid = (p1 == 0) | ((tt > 0) & (p2 == 0))
    return np.where(invalid, 0.0, out).astype(np.float32)


@dataclass(frozen=True)
class McConfig:
    T: int = 50
    lam: float = 0.03
    # None keeps the network's own (training) rate
    dropout_rate: float | None = None
    seed: int = 0
    # passes evaluated together; results do not depend on it
    chunk: int = 10

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if self.chunk < 1:
            raise ValueError("chunk must be >= 1")


@dataclass(frozen=True, eq=False)
class McResult:
    mean: np.ndarray
    std: np.ndarray
    final: np.ndarray
    removed_fraction: float


def uncertainty_filter(passes: np.ndarray, lam: float) -> McResult:
    """Mean, population std and the thresholded prediction of stacked passes.

    A pixel survives only when std < lam * mean. ``removed_fraction`` is the
    percentage of positive-mean pixels that were zeroed.
    """
    passes = np.asarray(passes, np.float64)
    mean = passes.mean(axis=0)
    std = np.sqrt(((passes - mean) ** 2).mean(axis=0))
    keep = std < lam * mean
    final = np.where(keep, mean, 0.0)
    positive = mean > 0
    n_pos = int(positive.sum())
    removed = 100.0 * float((positive & ~keep).sum()) / n_pos if n_pos else 0.0
    return McResult(mean, std, final, removed)


def with_dropout_rate(spec: NetworkSpec, rate: float) -> NetworkSpec:
    layers = [replace(l, rate=rate) if isinstance(l, Dropout) else l for l in spec.layers]
    return NetworkSpec(layers, spec.factor, {**spec.meta, "dropout_rate": rate})


def _first_dropout(spec: NetworkSpec) -> int:
    for i, l in enumerate(spec.layers):
        if isinstance(l, Dropout):
            return i
    return len(spec.layers)


def mc_passes(low: np.ndarray, spec: NetworkSpec, params: dict, cfg: McConfig) -> np.ndarray:
    """(T, rows, cols) predictions with active dropout.

    Pass ``t`` draws its masks from its own stream keyed by (seed, t), so the
    result does not depend on ``cfg.chunk``. Layers before the first dropout
    are deterministic and evaluated once.
    """
    if cfg.dropout_rate is not None:
        spec = with_dropout_rate(spec, cfg.dropout_rate)
    net = Network(spec, params)
    x = np.asarray(low, np.float32)[None, None]
    split = _first_dropout(spec)
    trunk = net.forward(x, stop=split)
    out = []
    for start in range(0, cfg.T, cfg.chunk):
        ts = range(start, min(start + cfg.chunk, cfg.T))
        rngs = [stream(cfg.seed, 3, t) for t in ts]
        xb = np.repeat(trunk, len(rngs), axis=0)
        out.append(net.forward(xb, dropout=True, rng=rngs, start=split)[:, 0])
    return np.concatenate(out)


def mc_infer(low: np.ndarray, spec: NetworkSpec, params: dict, cfg: McConfig = McConfig()) -> McResult:
    return uncertainty_filter(mc_passes(low, spec, params, cfg), cfg.lam)


@dataclass
class UpscaleOutput:
    image: np.ndarray
    mc: McResult | None = None
    seconds: float = 0.0


class Upscaler:
    """Maps a normalized (rows, cols) image to (rows * factor, cols)."""

    name = "upscaler"

    def __init__(self, factor: int):
        _check_factor(factor)
        self.factor = factor

    def run(self, low: np.ndarray) -> UpscaleOutput:
        raise NotImplementedError

    def __call__(self, low: np.ndarray) -> UpscaleOutput:
        t0 = time.perf_counter()
        out = self.run(np.asarray(low, np.float32))
        out.seconds = time.perf_counter() - t0
        return out


class LinearUpscaler(Upscaler):
    name = "linear"

    def run(self, low):
        return UpscaleOutput(upscale_linear(low, self.factor))


class CubicUpscaler(Upscaler):
    name = "cubic"

    def run(self, low):
        return UpscaleOutput(upscale_cubic(low, self.factor))


class NeuralUpscaler(Upscaler):
    """Network inference; with ``mc`` set, Monte-Carlo dropout and the
    uncertainty filter are applied and the filtered image is returned."""

    def __init__(self, spec: NetworkSpec, params: dict, mc: McConfig | None = None):
        super().__init__(spec.factor)
        self.spec = spec
        self.params = params
        self.mc = mc
        self.name = "nn-mc" if mc is not None else "nn"

    def run(self, low):
        if self.mc is None:
            y = Network(self.spec, self.params).forward(low[None, None])[0, 0]
            return UpscaleOutput(y)
        res = mc_infer(low, self.spec, self.params, self.mc)
        return UpscaleOutput(res.final.astype(np.float32), res)


class TruthUpscaler(Upscaler):
    """Looks up the true high-res image; for pipeline checks."""

    name = "truth"

    def __init__(self, factor: int, lookup):
        super().__init__(factor)
        self.lookup = lookup

    def run(self, low):
        return UpscaleOutput(np.asarray(self.lookup(low), np.float32))


def upscale_scan(low: RangeImage, upscaler: Upscaler) -> tuple[RangeImage, UpscaleOutput]:
    """normalize -> upscale -> denormalize (clamped, sub-minimum ranges dropped)."""
    hi_intr = upsample_intrinsics(low.intrinsics, upscaler.factor)
    out = upscaler(normalize(low))
    expected = (low.shape[0] * upscaler.factor, low.shape[1])
    if out.image.shape != expected:
        raise ValueError(f"{upscaler.name} produced {out.image.shape}, expected {expected}")
    img = np.clip(out.image, 0.0, 1.0)
    return denormalize(img, hi_intr), out


def upscale_pipeline(low: RangeImage, upscaler: Upscaler) -> PointCloud:
    img, _ = upscale_scan(low, upscaler)
    return unproject(img)
