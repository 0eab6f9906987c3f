"""Architectures, parameter storage and the forward/backward engine.

A network is a small tree of *segments*. Each segment is a chain of layers
fed by either the input image or another segment's output:

=========  ==============================  ================================
variant    shared segments                 heads
=========  ==============================  ================================
mtcnn1     trunk (4 conv + 2 dense)        aesthetic, semantic: output only
mtcnn2     trunk (4 conv)                  each head: 2 dense + output
mtcnn3     trunk (2 conv)                  aesthetic: 1 dense + output;
                                           semantic: 2 conv + 2 dense + output
enhanced   theta1 (2 conv), theta2 (rest)  aesthetic, semantic on theta2;
                                           aux aesthetic on theta1
=========  ==============================  ================================

ReLU follows every conv and dense layer except a head's output layer, and a
flatten is inserted automatically before the first dense layer.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError, ContractViolation, InputError, NumericalError
from .layers import LAYER_TYPES, LayerSpec, format_layers, parse_layers

VARIANTS = ("mtcnn1", "mtcnn2", "mtcnn3", "enhanced")
GROUPS = ("trunk", "head_aesthetic", "head_semantic", "head_aux")

# (trunk, aesthetic hidden, semantic hidden, aux hidden, aux split index)
_PRESETS = {
    "desk": {
        "input": (32, 32, 3),
        "mtcnn1": ("conv5-16,pool2,conv5-32,pool2,conv3-32,conv3-32,flatten,dense128,dense64", "", "", "", 0),
        "mtcnn2": ("conv5-16,pool2,conv5-32,pool2,conv3-32,conv3-32,flatten", "dense128,dense64", "dense128,dense64", "", 0),
        "mtcnn3": ("conv5-16,pool2,conv5-32,pool2", "flatten,dense64", "conv3-32,conv3-32,flatten,dense128,dense64", "", 0),
        "enhanced": ("conv5-16,pool2,conv5-32,pool2,conv3-32,conv3-32,flatten,dense128,dense64", "", "", "flatten,dense64", 4),
    },
    "small": {
        "input": (16, 16, 3),
        "mtcnn1": ("conv3-8,pool2,conv3-16,conv3-16,conv3-16,flatten,dense64,dense32", "", "", "", 0),
        "mtcnn2": ("conv3-8,pool2,conv3-16,conv3-16,conv3-16,flatten", "dense64,dense32", "dense64,dense32", "", 0),
        "mtcnn3": ("conv3-8,pool2,conv3-16", "flatten,dense32", "conv3-16,conv3-16,flatten,dense64,dense32", "", 0),
        "enhanced": ("conv3-8,pool2,conv3-16,conv3-16,conv3-16,flatten,dense64,dense32", "", "", "flatten,dense32", 3),
    },
}
SCALES = tuple(_PRESETS)


@dataclass(frozen=True)
class ArchitectureConfig:
    variant: str
    input_shape: tuple
    n_classes: int
    n_attributes: int
    trunk: tuple
    aesthetic_head: tuple = ()
    semantic_head: tuple = ()
    aux_head: tuple = ()
    aux_after: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.n_classes < 2 or self.n_attributes < 1:
            raise ConfigError("need at least 2 aesthetic classes and 1 attribute")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"bad input shape {self.input_shape}")
        if self.variant == "enhanced" and not 0 < self.aux_after < len(self.trunk):
            raise ConfigError("enhanced variant needs 0 < aux_after < len(trunk)")

    @classmethod
    def preset(cls, variant, scale="desk", n_classes=2, n_attributes=8):
        if scale not in _PRESETS:
            raise ConfigError(f"unknown scale {scale!r}; choose from {SCALES}")
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        trunk, aes, sem, aux, split = _PRESETS[scale][variant]
        return cls(
            variant=variant,
            input_shape=_PRESETS[scale]["input"],
            n_classes=n_classes,
            n_attributes=n_attributes,
            trunk=tuple(parse_layers(trunk)),
            aesthetic_head=tuple(parse_layers(aes)),
            semantic_head=tuple(parse_layers(sem)),
            aux_head=tuple(parse_layers(aux)),
            aux_after=split,
        )

    def with_layers(self, **layer_strings):
        """Return a copy with some layer lists replaced by parsed strings."""
        kw = {k: tuple(parse_layers(v)) for k, v in layer_strings.items()}
        return replace(self, **kw)

    def to_dict(self):
        return {
            "variant": self.variant,
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "n_attributes": self.n_attributes,
            "trunk": format_layers(self.trunk),
            "aesthetic_head": format_layers(self.aesthetic_head),
            "semantic_head": format_layers(self.semantic_head),
            "aux_head": format_layers(self.aux_head),
            "aux_after": self.aux_after,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            variant=d["variant"],
            input_shape=tuple(int(v) for v in d["input_shape"]),
            n_classes=int(d["n_classes"]),
            n_attributes=int(d["n_attributes"]),
            trunk=tuple(parse_layers(d["trunk"])),
            aesthetic_head=tuple(parse_layers(d.get("aesthetic_head", ""))),
            semantic_head=tuple(parse_layers(d.get("semantic_head", ""))),
            aux_head=tuple(parse_layers(d.get("aux_head", ""))),
            aux_after=int(d.get("aux_after", 0)),
        )


class ParamStore:
    """Named parameters, their gradients, and the group each belongs to.

    Iteration order is declaration order, which is also the checkpoint order.
    """

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.groups = {}
        self.task_layers = {}

    def add(self, name, group, value):
        if name in self.params:
            raise ConfigError(f"duplicate parameter {name}")
        if group not in GROUPS:
            raise ConfigError(f"unknown parameter group {group!r}")
        self.params[name] = np.asarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.params[name])
        self.groups[name] = group

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def names(self, group=None):
        return [n for n, g in self.groups.items() if group is None or g == group]

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self):
        other = ParamStore()
        for name in self.params:
            other.add(name, self.groups[name], self.params[name].copy())
            other.grads[name][...] = self.grads[name]
        other.task_layers = dict(self.task_layers)
        return other

    def n_values(self):
        return sum(p.size for p in self.params.values())

    # -- task matrix W = [W_a, W_s] (optionally with W_a') ---------------------

    def task_weight_names(self, include_aux=False):
        keys = ["aux"] if include_aux else []
        keys += ["aesthetic", "semantic"]
        if include_aux and "aux" not in self.task_layers:
            raise ConfigError("this architecture has no auxiliary aesthetic head")
        return [self.task_layers[k] + ".weight" for k in keys]

    def task_matrix(self, include_aux=False):
        """Final-layer weights of the task heads stacked as a d x (C+M) matrix."""
        mats = [self.params[n] for n in self.task_weight_names(include_aux)]
        dims = {m.shape[0] for m in mats}
        if len(dims) != 1:
            raise ConfigError(f"task heads see representations of different widths {sorted(dims)}")
        return np.hstack(mats)

    def add_task_matrix_grad(self, grad, include_aux=False):
        start = 0
        for name in self.task_weight_names(include_aux):
            width = self.params[name].shape[1]
            self.grads[name] += grad[:, start : start + width]
            start += width


@dataclass
class Segment:
    name: str
    group: str
    parent: str
    layers: list = field(default_factory=list)


class LayerGraph:
    """Instantiated layers for one :class:`ArchitectureConfig`."""

    def __init__(self, config):
        self.config = config
        self.segments = []
        self.outputs = {}
        self._build()

    def _chain(self, seg, specs, in_shape, final_units=None):
        shape = in_shape
        counts = {}
        plan = list(specs)
        if final_units is not None:
            plan.append(LayerSpec("dense", units=final_units))
        for i, spec in enumerate(plan):
            is_output = final_units is not None and i == len(plan) - 1
            if spec.kind == "dense" and len(shape) != 1:
                shape = self._add(seg, LayerSpec("flatten"), shape, counts, i)
            shape = self._add(seg, spec, shape, counts, i, name="out" if is_output else None)
            if spec.kind in ("conv", "dense") and not is_output:
                shape = self._add(seg, LayerSpec("relu"), shape, counts, i)
        return shape

    def _add(self, seg, spec, shape, counts, index, name=None):
        if name is None:
            counts[spec.kind] = counts.get(spec.kind, 0) + 1
            name = f"{spec.kind}{counts[spec.kind]}"
        try:
            layer = LAYER_TYPES[spec.kind](f"{seg.name}.{name}", shape, spec)
        except ValueError as exc:
            raise ConfigError(f"segment {seg.name!r} layer {index} ({spec.token()}): {exc}") from None
        seg.layers.append(layer)
        return layer.out_shape

    def _build(self):
        cfg = self.config
        shapes = {}
        if cfg.variant == "enhanced":
            shared = [("theta1", None, cfg.trunk[: cfg.aux_after]), ("theta2", "theta1", cfg.trunk[cfg.aux_after :])]
        else:
            shared = [("trunk", None, cfg.trunk)]
        for name, parent, specs in shared:
            seg = Segment(name, "trunk", parent)
            shapes[name] = self._chain(seg, specs, shapes[parent] if parent else tuple(cfg.input_shape))
            self.segments.append(seg)
        top = shared[-1][0]
        heads = [
            ("aesthetic", "head_aesthetic", top, cfg.aesthetic_head, cfg.n_classes),
            ("semantic", "head_semantic", top, cfg.semantic_head, cfg.n_attributes),
        ]
        if cfg.variant == "enhanced":
            heads.append(("aux", "head_aux", "theta1", cfg.aux_head, cfg.n_classes))
        for name, group, parent, specs, units in heads:
            seg = Segment(name, group, parent)
            self._chain(seg, specs, shapes[parent], final_units=units)
            self.segments.append(seg)
            self.outputs[name] = seg
        self.representation_dim = self.outputs["aesthetic"].layers[-1].in_shape[0]

    def segment(self, name):
        for seg in self.segments:
            if seg.name == name:
                return seg
        raise KeyError(name)


@dataclass
class ForwardTrace:
    graph: "LayerGraph"
    batch_size: int
    caches: dict
    activations: dict

    @property
    def aesthetic(self):
        return self.activations["aesthetic"]

    @property
    def semantic(self):
        return self.activations["semantic"]

    @property
    def aux(self):
        return self.activations.get("aux")

    def logits(self):
        return {k: v for k, v in self.activations.items() if k in ("aesthetic", "semantic", "aux")}

    def signature(self):
        """ReLU masks and pool argmaxes: the piecewise-linear region of the pass."""
        sig = []
        for seg in self.graph.segments:
            for layer, cache in zip(seg.layers, self.caches[seg.name]):
                if layer.kind in ("relu", "pool"):
                    sig.append(cache)
        return sig


def build(config, seed):
    """Instantiate layers and draw parameters.

    Weights are N(0, 1/fan_in); biases start at zero. The stream is a
    ``numpy.random.Generator`` seeded with ``seed`` and consumed in
    declaration order, so equal seeds give bitwise-equal parameters.
    """
    graph = LayerGraph(config)
    rng = np.random.default_rng(seed)
    params = ParamStore()
    for seg in graph.segments:
        for layer in seg.layers:
            for pname, shape in layer.param_shapes.items():
                if pname == "weight":
                    value = rng.standard_normal(shape) * np.sqrt(1.0 / layer.fan_in)
                else:
                    value = np.zeros(shape)
                params.add(f"{layer.name}.{pname}", seg.group, value)
    for key, seg in graph.outputs.items():
        params.task_layers[key] = seg.layers[-1].name
    return graph, params


def forward(graph, params, images):
    x = np.asarray(images, dtype=np.float64)
    expected = tuple(graph.config.input_shape)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise InputError(f"batch shape {x.shape} does not match input {expected}")
    if not np.all(np.isfinite(x)):
        raise InputError("input batch contains non-finite values")
    caches, acts = {}, {}
    p = params.params
    for seg in graph.segments:
        h = x if seg.parent is None else acts[seg.parent]
        seg_caches = []
        for layer in seg.layers:
            h, cache = layer.forward(h, p)
            seg_caches.append(cache)
        caches[seg.name] = seg_caches
        acts[seg.name] = h
    if not all(np.all(np.isfinite(acts[k])) for k in graph.outputs):
        raise NumericalError("forward pass produced non-finite logits")
    return ForwardTrace(graph, x.shape[0], caches, acts)


def backward(graph, params, trace, output_grads):
    """Backpropagate ``output_grads`` (keyed by head name) into ``params.grads``.

    Heads missing from ``output_grads`` (or mapped to ``None``) contribute
    nothing; parameter groups reachable only through them keep zero gradient.
    """
    if trace is None or trace.graph is not graph:
        raise ContractViolation("backward needs the trace from a forward pass on this graph")
    params.zero_grad()
    pending = {}
    for name, g in output_grads.items():
        if g is None:
            continue
        if name not in graph.outputs:
            raise ContractViolation(f"unknown output {name!r}")
        pending[name] = np.asarray(g, dtype=np.float64)
    p, grads = params.params, params.grads
    for seg in reversed(graph.segments):
        g = pending.pop(seg.name, None)
        if g is None:
            continue
        caches = trace.caches[seg.name]
        for i in range(len(seg.layers) - 1, -1, -1):
            need_dx = i > 0 or seg.parent is not None
            g = seg.layers[i].backward(g, caches[i], p, grads, need_dx=need_dx)
        if seg.parent is not None:
            prev = pending.get(seg.parent)
            pending[seg.parent] = g if prev is None else prev + g
    return grads
