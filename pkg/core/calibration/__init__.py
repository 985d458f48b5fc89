"""Calibration corpora, per-layer input capture, usage profiling and block traces."""

from .capture import (
    BlockTrace,
    UsageProfile,
    block_trace_from_sinks,
    capture_block_io,
    capture_layer_inputs,
    profile_usage,
    render_usage,
    run_traces,
    usage_from_traces,
)
from .corpus import (
    SOURCE_FILE,
    SOURCE_MARKOV,
    SOURCE_MODEL,
    CalibrationSet,
    dumps_calibration,
    generate_calibration,
    load_calibration,
    load_token_file,
    loads_calibration,
    sample_from_model,
    save_calibration,
)

__all__ = [
    "BlockTrace",
    "CalibrationSet",
    "SOURCE_FILE",
    "SOURCE_MARKOV",
    "SOURCE_MODEL",
    "UsageProfile",
    "block_trace_from_sinks",
    "capture_block_io",
    "capture_layer_inputs",
    "dumps_calibration",
    "generate_calibration",
    "load_calibration",
    "load_token_file",
    "loads_calibration",
    "profile_usage",
    "render_usage",
    "run_traces",
    "sample_from_model",
    "save_calibration",
    "usage_from_traces",
]
