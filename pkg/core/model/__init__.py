"""Desk-scale MoE decoder: spec, weights, forward pass and MOEQ1 container."""

from .container import dumps_model, load_model, loads_model, save_model
from .forward import (
    TraceSink,
    ffn,
    forward,
    moe_block_forward,
    rmsnorm,
    route,
    route_batch,
    select_top_k,
    softmax,
)
from .spec import MoEModelSpec
from .weights import (
    ExpertWeights,
    MoEBlock,
    MoEModel,
    WeightId,
    build_model,
    enumerate_weight_ids,
)

__all__ = [
    "ExpertWeights",
    "MoEBlock",
    "MoEModel",
    "MoEModelSpec",
    "TraceSink",
    "WeightId",
    "build_model",
    "dumps_model",
    "enumerate_weight_ids",
    "ffn",
    "forward",
    "load_model",
    "loads_model",
    "moe_block_forward",
    "rmsnorm",
    "route",
    "route_batch",
    "save_model",
    "select_top_k",
    "softmax",
]
