"""Core package for moeq.

Mixed-precision post-training quantization of mixture-of-experts decoders:
a desk-scale model, calibration capture, a grouped affine codec with RTN and
GPTQ backends, bit-allocation strategies and a perplexity harness.
"""
