from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Tuple

import numpy as np

from core.calibration.corpus import CalibrationSet
from core.errors import InvalidArgument
from core.model.forward import forward
from core.model.weights import MoEModel
from core.quant.container import QuantizedModel


def _as_model(model: MoEModel | QuantizedModel) -> MoEModel:
    return model.to_model() if isinstance(model, QuantizedModel) else model


def sequence_nll(model: MoEModel, tokens: np.ndarray) -> Tuple[float, int]:
    """Summed next-token negative log-likelihood and the number of predicted positions."""
    if tokens.size < 2:
        return 0.0, 0
    logits = forward(model, tokens)[:-1]
    m = logits.max(axis=1, keepdims=True)
    log_z = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))).ravel()
    target = logits[np.arange(tokens.size - 1), tokens[1:]]
    return float(np.sum(log_z - target)), int(tokens.size - 1)


def perplexity(
    model: MoEModel | QuantizedModel,
    eval_set: CalibrationSet,
    *,
    max_workers: Optional[int] = None,
) -> float:
    """exp of the mean next-token NLL over every predicted position of the eval set.

    Quantized models are dequantized first. Sequences are scored on a thread
    pool and summed in sequence order, so the value does not depend on the
    worker count.
    """
    fp = _as_model(model)
    eval_set.validate_for(fp.spec.vocab_size)
    if max_workers == 1 or len(eval_set) <= 1:
        parts = [sequence_nll(fp, s) for s in eval_set.sequences]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as ex:
            parts = list(ex.map(lambda s: sequence_nll(fp, s), eval_set.sequences))
    total = sum(n for _, n in parts)
    if total == 0:
        raise InvalidArgument.build(
            "eval set has no predicted positions", hint="every eval sequence needs at least two tokens"
        )
    nll = 0.0
    for value, _ in parts:
        nll += value
    return float(np.exp(nll / total))
