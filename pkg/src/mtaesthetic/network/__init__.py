"""Layer-graph engine for the multi-task networks."""
from .checkpoint import load_checkpoint, load_into, read_checkpoint, save_checkpoint
from .graph import (
    GROUPS,
    SCALES,
    VARIANTS,
    ArchitectureConfig,
    ForwardTrace,
    LayerGraph,
    ParamStore,
    backward,
    build,
    forward,
)
from .layers import LayerSpec, format_layers, parse_layers

__all__ = [
    "ArchitectureConfig", "ForwardTrace", "GROUPS", "LayerGraph", "LayerSpec", "ParamStore",
    "SCALES", "VARIANTS", "backward", "build", "format_layers", "forward", "load_checkpoint",
    "load_into", "parse_layers", "read_checkpoint", "save_checkpoint",
]
