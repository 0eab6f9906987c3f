"""Layer primitives with hand-written backward passes.

Activations are NHWC float64 arrays. Each layer owns no state beyond its
shape parameters; weights live in a :class:`~mtaesthetic.network.graph.ParamStore`
and are passed in by name.
"""
from dataclasses import dataclass
import re

import numpy as np

from .. import kernels
from ..errors import ConfigError

KINDS = ("conv", "pool", "dense", "relu", "flatten")


@dataclass(frozen=True)
class LayerSpec:
    """One layer: ``kind`` plus its integer shape parameters.

    ``size`` is the filter/window edge, ``units`` the output channels (conv)
    or output width (dense).
    """

    kind: str
    size: int = 0
    stride: int = 1
    units: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv" and (self.size < 1 or self.units < 1 or self.stride < 1):
            raise ConfigError(f"bad conv spec {self}")
        if self.kind == "pool" and (self.size < 1 or self.stride < 1):
            raise ConfigError(f"bad pool spec {self}")
        if self.kind == "dense" and self.units < 1:
            raise ConfigError(f"bad dense spec {self}")

    def token(self):
        if self.kind == "conv":
            s = f"conv{self.size}-{self.units}"
            return s if self.stride == 1 else f"{s}/{self.stride}"
        if self.kind == "pool":
            s = f"pool{self.size}"
            return s if self.stride == self.size else f"{s}/{self.stride}"
        if self.kind == "dense":
            return f"dense{self.units}"
        return self.kind


_TOKEN = re.compile(r"^(conv(\d+)-(\d+)|pool(\d+)|dense(\d+)|relu|flatten)(?:/(\d+))?$")


def parse_layers(text):
    """Parse ``"conv5-16,pool2,dense64"`` style layer lists.

    ``convK-F[/S]`` is a KxK convolution with F filters and stride S (default
    1); ``poolK[/S]`` is max pooling (stride defaults to K).
    """
    specs = []
    for raw in (t.strip() for t in text.split(",")):
        if not raw:
            continue
        m = _TOKEN.match(raw)
        if m is None:
            raise ConfigError(f"cannot parse layer token {raw!r}")
        stride = int(m.group(6)) if m.group(6) else None
        if m.group(2):
            specs.append(LayerSpec("conv", int(m.group(2)), stride or 1, int(m.group(3))))
        elif m.group(4):
            k = int(m.group(4))
            specs.append(LayerSpec("pool", k, stride or k))
        elif m.group(5):
            specs.append(LayerSpec("dense", units=int(m.group(5))))
        else:
            specs.append(LayerSpec(m.group(1)))
    return specs


def format_layers(specs):
    return ",".join(s.token() for s in specs)


class Conv:
    kind = "conv"

    def __init__(self, name, in_shape, spec):
        h, w, c = in_shape
        k, s = spec.size, spec.stride
        oh, ow = (h - k) // s + 1, (w - k) // s + 1
        if h < k or w < k or oh < 1 or ow < 1:
            raise ValueError(f"conv{k}/{s} does not fit input {in_shape}")
        self.name, self.k, self.stride = name, k, s
        self.in_shape, self.out_shape = in_shape, (oh, ow, spec.units)
        self.param_shapes = {"weight": (k, k, c, spec.units), "bias": (spec.units,)}
        self.fan_in = k * k * c

    def forward(self, x, p):
        w = p[self.name + ".weight"]
        cols = kernels.im2col(np.ascontiguousarray(x), self.k, self.stride)
        out = cols @ w.reshape(-1, w.shape[-1]) + p[self.name + ".bias"]
        return out.reshape((x.shape[0],) + self.out_shape), (cols, x.shape[0])

    def backward(self, dout, cache, p, g, need_dx=True):
        cols, n = cache
        w = p[self.name + ".weight"]
        d2 = dout.reshape(-1, w.shape[-1])
        g[self.name + ".weight"] += (cols.T @ d2).reshape(w.shape)
        g[self.name + ".bias"] += d2.sum(axis=0)
        if not need_dx:
            return None
        dcols = np.ascontiguousarray(d2 @ w.reshape(-1, w.shape[-1]).T)
        h, wd, c = self.in_shape
        return kernels.col2im(dcols, n, h, wd, c, self.k, self.stride)


class Pool:
    kind = "pool"
    param_shapes = {}

    def __init__(self, name, in_shape, spec):
        h, w, c = in_shape
        k, s = spec.size, spec.stride
        oh, ow = (h - k) // s + 1, (w - k) // s + 1
        if h < k or w < k or oh < 1 or ow < 1:
            raise ValueError(f"pool{k}/{s} does not fit input {in_shape}")
        self.name, self.k, self.stride = name, k, s
        self.in_shape, self.out_shape = in_shape, (oh, ow, c)

    def forward(self, x, p):
        out, idx = kernels.maxpool_forward(np.ascontiguousarray(x), self.k, self.stride)
        return out, idx

    def backward(self, dout, idx, p, g, need_dx=True):
        h, w, _ = self.in_shape
        return kernels.maxpool_backward(np.ascontiguousarray(dout), idx, h, w, self.k, self.stride)


class Relu:
    kind = "relu"
    param_shapes = {}

    def __init__(self, name, in_shape, spec=None):
        self.name, self.in_shape, self.out_shape = name, in_shape, in_shape

    def forward(self, x, p):
        mask = x > 0
        return x * mask, mask

    def backward(self, dout, mask, p, g, need_dx=True):
        return dout * mask


class Flatten:
    kind = "flatten"
    param_shapes = {}

    def __init__(self, name, in_shape, spec=None):
        self.name, self.in_shape = name, in_shape
        self.out_shape = (int(np.prod(in_shape)),)

    def forward(self, x, p):
        return x.reshape(x.shape[0], -1), None

    def backward(self, dout, cache, p, g, need_dx=True):
        return dout.reshape((dout.shape[0],) + self.in_shape)


class Dense:
    kind = "dense"

    def __init__(self, name, in_shape, spec):
        if len(in_shape) != 1:
            raise ValueError(f"dense layer needs a flat input, got {in_shape}")
        self.name, self.in_shape, self.out_shape = name, in_shape, (spec.units,)
        self.param_shapes = {"weight": (in_shape[0], spec.units), "bias": (spec.units,)}
        self.fan_in = in_shape[0]

    def forward(self, x, p):
        return x @ p[self.name + ".weight"] + p[self.name + ".bias"], x

    def backward(self, dout, x, p, g, need_dx=True):
        g[self.name + ".weight"] += x.T @ dout
        g[self.name + ".bias"] += dout.sum(axis=0)
        if not need_dx:
            return None
        return dout @ p[self.name + ".weight"].T


LAYER_TYPES = {"conv": Conv, "pool": Pool, "relu": Relu, "flatten": Flatten, "dense": Dense}
