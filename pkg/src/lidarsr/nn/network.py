"""Layered network description, parameters, and the forward/backward passes."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from lidarsr.nn import functional as F
from lidarsr.nn.functional import ShapeError


def _pair(v):
    return tuple(int(a) for a in v) if isinstance(v, (tuple, list)) else (int(v), int(v))


@dataclass(frozen=True)
class Conv:
    name: str
    in_ch: int
    out_ch: int
    k: tuple = (3, 3)
    stride: tuple = (1, 1)
    pad: tuple = (1, 1)

    def __post_init__(self):
        for a in ("k", "stride", "pad"):
            object.__setattr__(self, a, _pair(getattr(self, a)))
        if min(self.k) < 1:
            raise ValueError(f"{self.name}: kernel size must be >= 1")


@dataclass(frozen=True)
class TransposedConv(Conv):
    pass


@dataclass(frozen=True)
class BatchNorm:
    name: str
    ch: int
    momentum: float = 0.9
    eps: float = 1e-5


@dataclass(frozen=True)
class ReLU:
    name: str


@dataclass(frozen=True)
class AvgPool:
    name: str
    k: int = 2


@dataclass(frozen=True)
class Dropout:
    name: str
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"{self.name}: dropout rate must be in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class Concat:
    """Appends the output of layer ``skip`` to the running tensor along channels."""

    name: str
    skip: str


LAYER_TYPES = {cls.__name__: cls for cls in (Conv, TransposedConv, BatchNorm, ReLU, AvgPool, Dropout, Concat)}


def layer_to_dict(layer) -> dict:
    d = asdict(layer)
    d["kind"] = type(layer).__name__
    return d


def layer_from_dict(d: dict):
    d = dict(d)
    cls = LAYER_TYPES[d.pop("kind")]
    return cls(**d)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    factor: int = 4
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        seen = set()
        for l in self.layers:
            if isinstance(l, Concat) and l.skip not in seen:
                raise ValueError(f"{l.name}: skip source {l.skip!r} does not precede it")
            seen.add(l.name)
        last = self.layers[-1]
        if type(last) is not Conv or last.out_ch != 1:
            raise ValueError("final layer must be a single-filter convolution")

    def output_shape(self, in_shape) -> tuple:
        """Static shape propagation; raises ShapeError on any mismatch."""
        n, c, h, w = in_shape
        shapes = {}
        for l in self.layers:
            if isinstance(l, TransposedConv):
                if c != l.in_ch:
                    raise ShapeError(f"{l.name}: expects {l.in_ch} channels, got {c}")
                c = l.out_ch
                h = F.tconv_out_size(h, l.k[0], l.stride[0], l.pad[0])
                w = F.tconv_out_size(w, l.k[1], l.stride[1], l.pad[1])
            elif isinstance(l, Conv):
                if c != l.in_ch:
                    raise ShapeError(f"{l.name}: expects {l.in_ch} channels, got {c}")
                c = l.out_ch
                h = F.conv_out_size(h, l.k[0], l.stride[0], l.pad[0])
                w = F.conv_out_size(w, l.k[1], l.stride[1], l.pad[1])
            elif isinstance(l, BatchNorm):
                if c != l.ch:
                    raise ShapeError(f"{l.name}: expects {l.ch} channels, got {c}")
            elif isinstance(l, AvgPool):
                if h % l.k or w % l.k:
                    raise ShapeError(f"{l.name}: {(h, w)} not divisible by {l.k}")
                h, w = h // l.k, w // l.k
            elif isinstance(l, Concat):
                sn, sc, sh, sw = shapes[l.skip]
                if (sh, sw) != (h, w):
                    raise ShapeError(f"{l.name}: skip {l.skip} is {(sh, sw)}, running tensor {(h, w)}")
                c += sc
            if h < 1 or w < 1:
                raise ShapeError(f"{l.name}: empty output")
            shapes[l.name] = (n, c, h, w)
        return (n, c, h, w)

    def to_dict(self) -> dict:
        return {"factor": self.factor, "meta": self.meta, "layers": [layer_to_dict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls([layer_from_dict(x) for x in d["layers"]], int(d["factor"]), dict(d.get("meta", {})))


def build_srnet(factor: int, base_filters: int = 8, dropout_rate: float = 0.25, levels: int = 4) -> NetworkSpec:
    """Encoder-decoder upscaler for range images.

    Vertical-only transposed convolutions first raise the row count to the
    target; a ``levels``-deep encoder/decoder with concatenated skips follows,
    and a linear single-filter 3x3 convolution produces the output.
    """
    if factor not in (2, 4, 8):
        raise ValueError(f"factor must be 2, 4 or 8, got {factor}")
    f = base_filters
    layers = []
    c = 1
    for s in range(int(math.log2(factor))):
        layers += [
            TransposedConv(f"in{s}_up", c, f, k=(4, 3), stride=(2, 1), pad=(1, 1)),
            BatchNorm(f"in{s}_bn", f),
            ReLU(f"in{s}_relu"),
        ]
        c = f

    def block(tag, cin, cout):
        return [
            Dropout(f"{tag}_drop_in", dropout_rate),
            Conv(f"{tag}_conv1", cin, cout),
            BatchNorm(f"{tag}_bn1", cout),
            ReLU(f"{tag}_relu1"),
            Conv(f"{tag}_conv2", cout, cout),
            BatchNorm(f"{tag}_bn2", cout),
            ReLU(f"{tag}_relu2"),
            Dropout(f"{tag}_drop_out", dropout_rate),
        ]

    widths = [f * 2**l for l in range(levels)]
    for l, ch in enumerate(widths):
        layers += block(f"enc{l}", c, ch)
        c = ch
        if l < levels - 1:
            layers.append(AvgPool(f"enc{l}_pool", 2))
    for l in range(levels - 2, -1, -1):
        ch = widths[l]
        layers += [
            TransposedConv(f"dec{l}_up", c, ch, k=(4, 4), stride=(2, 2), pad=(1, 1)),
            BatchNorm(f"dec{l}_upbn", ch),
            ReLU(f"dec{l}_uprelu"),
            Concat(f"dec{l}_cat", f"enc{l}_drop_out"),
        ]
        layers += block(f"dec{l}", 2 * ch, ch)
        c = ch
    layers.append(Conv("out", c, 1))
    meta = {"base_filters": base_filters, "dropout_rate": dropout_rate, "levels": levels}
    return NetworkSpec(layers, factor, meta)


PARAM_ORDER = ("weight", "bias", "gamma", "beta", "running_mean", "running_var")
TRAINABLE = ("weight", "bias", "gamma", "beta")


def init_params(spec: NetworkSpec, rng: np.random.Generator, dtype=np.float32) -> dict:
    """He-uniform convolution weights, zero biases, identity batch norm."""
    params = {}
    for l in spec.layers:
        if isinstance(l, TransposedConv):
            fan_in = l.in_ch * l.k[0] * l.k[1] / (l.stride[0] * l.stride[1])
            lim = math.sqrt(6.0 / fan_in)
            w = rng.uniform(-lim, lim, (l.in_ch, l.out_ch, *l.k))
            params[l.name] = {"weight": w.astype(dtype), "bias": np.zeros(l.out_ch, dtype)}
        elif isinstance(l, Conv):
            lim = math.sqrt(6.0 / (l.in_ch * l.k[0] * l.k[1]))
            w = rng.uniform(-lim, lim, (l.out_ch, l.in_ch, *l.k))
            params[l.name] = {"weight": w.astype(dtype), "bias": np.zeros(l.out_ch, dtype)}
        elif isinstance(l, BatchNorm):
            params[l.name] = {
                "gamma": np.ones(l.ch, dtype),
                "beta": np.zeros(l.ch, dtype),
                "running_mean": np.zeros(l.ch, dtype),
                "running_var": np.ones(l.ch, dtype),
            }
    return params


def iter_arrays(spec: NetworkSpec, params: dict):
    """(layer, key, array) in canonical file order."""
    for l in spec.layers:
        p = params.get(l.name)
        if p is None:
            continue
        for key in PARAM_ORDER:
            if key in p:
                yield l.name, key, p[key]


def cast_params(params: dict, dtype) -> dict:
    return {name: {k: v.astype(dtype) for k, v in p.items()} for name, p in params.items()}


def copy_params(params: dict) -> dict:
    return {name: {k: v.copy() for k, v in p.items()} for name, p in params.items()}


class Network:
    """A spec bound to parameters.

    ``bn_train`` selects batch statistics (and updates the running ones);
    ``dropout`` toggles dropout. Training uses both; plain inference neither;
    Monte-Carlo inference keeps dropout on with running statistics.
    """

    def __init__(self, spec: NetworkSpec, params: dict):
        self.spec = spec
        self.params = params
        self._cache = None

    def forward(self, x, bn_train=False, dropout=False, rng=None, keep_cache=False, start=0, stop=None):
        layers = self.spec.layers
        stop = len(layers) if stop is None else stop
        if (dropout and rng is None) and any(isinstance(l, Dropout) for l in layers[start:stop]):
            raise ValueError("active dropout needs an rng")
        outputs = {}
        cache = []
        for l in layers[start:stop]:
            p = self.params.get(l.name)
            inp = x
            aux = None
            if isinstance(l, TransposedConv):
                x = F.tconv2d_forward(x, p["weight"], p["bias"], l.stride, l.pad)
            elif isinstance(l, Conv):
                x = F.conv2d_forward(x, p["weight"], p["bias"], l.stride, l.pad)
            elif isinstance(l, BatchNorm):
                x, aux = F.batchnorm_forward(
                    x, p["gamma"], p["beta"], p["running_mean"], p["running_var"],
                    l.momentum, l.eps, bn_train,
                )
            elif isinstance(l, ReLU):
                x = F.relu_forward(x)
            elif isinstance(l, AvgPool):
                x = F.avgpool_forward(x, l.k)
            elif isinstance(l, Dropout):
                if dropout:
                    aux = F.dropout_mask(x.shape, l.rate, rng, x.dtype)
                    x = x * aux
            elif isinstance(l, Concat):
                x = np.concatenate([x, outputs[l.skip]], axis=1)
            outputs[l.name] = x
            if keep_cache:
                cache.append((l, inp, aux))
        if keep_cache:
            self._cache = cache
        return x

    def backward(self, dy) -> dict:
        """Parameter gradients for the last cached forward; also sets ``self.input_grad``."""
        if self._cache is None:
            raise RuntimeError("backward needs a forward with keep_cache=True")
        grads = {}
        pending = {}
        g = dy
        for l, inp, aux in reversed(self._cache):
            if l.name in pending:
                g = g + pending.pop(l.name)
            p = self.params.get(l.name)
            if isinstance(l, TransposedConv):
                g, dw, db = F.tconv2d_backward(g, inp, p["weight"], l.stride, l.pad)
                grads[l.name] = {"weight": dw, "bias": db}
            elif isinstance(l, Conv):
                g, dw, db = F.conv2d_backward(g, inp, p["weight"], l.stride, l.pad)
                grads[l.name] = {"weight": dw, "bias": db}
            elif isinstance(l, BatchNorm):
                g, dgamma, dbeta = F.batchnorm_backward(g, aux)
                grads[l.name] = {"gamma": dgamma, "beta": dbeta}
            elif isinstance(l, ReLU):
                g = F.relu_backward(g, inp)
            elif isinstance(l, AvgPool):
                g = F.avgpool_backward(g, l.k)
            elif isinstance(l, Dropout):
                if aux is not None:
                    g = g * aux
            elif isinstance(l, Concat):
                c = inp.shape[1]
                skip_g = g[:, c:]
                pending[l.skip] = pending[l.skip] + skip_g if l.skip in pending else skip_g
                g = g[:, :c]
        self.input_grad = g
        self._cache = None
        return grads
