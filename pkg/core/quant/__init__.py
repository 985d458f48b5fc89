"""Grouped affine codec with RTN and GPTQ backends, plus the MOEQZ1 container."""

from .codec import (
    BACKENDS,
    DEFAULT_GROUP_SIZE,
    SUPPORTED_BITS,
    GroupedQuantTensor,
    dequantize,
    hessian_form_error,
    quantize_group_affine,
    reconstruction_error,
    rtn_quantize,
)
from .container import (
    QuantizedModel,
    dumps_quantized,
    is_quantized_file,
    load_quantized,
    loads_quantized,
    save_quantized,
)
from .gptq import DEFAULT_DAMP_RATIO, gptq_quantize, hessian

__all__ = [
    "BACKENDS",
    "DEFAULT_DAMP_RATIO",
    "DEFAULT_GROUP_SIZE",
    "SUPPORTED_BITS",
    "GroupedQuantTensor",
    "QuantizedModel",
    "dequantize",
    "dumps_quantized",
    "gptq_quantize",
    "hessian",
    "hessian_form_error",
    "is_quantized_file",
    "load_quantized",
    "loads_quantized",
    "quantize_group_affine",
    "reconstruction_error",
    "rtn_quantize",
    "save_quantized",
]
