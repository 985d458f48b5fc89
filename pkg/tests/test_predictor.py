from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from core.calibration import BlockTrace, capture_block_io, generate_calibration
from core.errors import EmptyTrace, InvalidArgument
from core.model import build_model
from core.numerics import SplitMix64
from core.plan.planners import plan_blocks
from core.predictor import (
    PredictorConfig,
    dumps_predictor,
    load_predictor,
    loss_and_grad,
    plan_predicted_blocks,
    predict_block_scores,
    save_predictor,
    spearman,
    train_block_predictor,
)
from core.predictor.bsp import BlockParams, BlockPredictor, BlockScorePredictor

from tests.utils import scale_expert_down, tiny_spec


def _constant_cosine_trace(c: float, n: int = 256, d: int = 16, seed: int = 0) -> BlockTrace:
    rng = SplitMix64(seed)
    x = 5.0 + 0.1 * rng.normal((n, d))
    u = rng.normal((n, d))
    xn = x / np.linalg.norm(x, axis=1, keepdims=True)
    u -= np.sum(u * xn, axis=1, keepdims=True) * xn
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    y = c * xn + np.sqrt(1.0 - c * c) * u
    return BlockTrace({0: (x, y)})


def _random_params(rng: SplitMix64, h: int, d: int) -> BlockParams:
    return BlockParams(
        w1=rng.normal((h, d)) * 0.5,
        b1=rng.normal(h) * 0.5,
        w2=rng.normal(h) * 0.5,
        b2=float(rng.normal(1)[0]) * 0.5,
    )


def test_gradient_matches_central_differences():
    rng = SplitMix64(11)
    p = _random_params(rng, 6, 5)
    x = rng.normal((10, 5))
    s = rng.uniform(-0.9, 0.9, 10)
    _, g = loss_and_grad(p, x, s)

    eps = 1e-5

    def numeric(name: str) -> np.ndarray:
        base = np.atleast_1d(np.asarray(getattr(p, name), dtype=np.float64))
        out = np.zeros_like(base)
        for idx in np.ndindex(*base.shape):
            hi, lo = p.copy(), p.copy()
            a, b = base.copy(), base.copy()
            a[idx] += eps
            b[idx] -= eps
            setattr(hi, name, float(a[0]) if name == "b2" else a)
            setattr(lo, name, float(b[0]) if name == "b2" else b)
            out[idx] = (loss_and_grad(hi, x, s)[0] - loss_and_grad(lo, x, s)[0]) / (2 * eps)
        return out

    for name in ("w1", "b1", "w2", "b2"):
        analytic = np.atleast_1d(np.asarray(getattr(g, name), dtype=np.float64))
        n = numeric(name)
        assert np.linalg.norm(analytic - n) <= 1e-4 * np.linalg.norm(n), name


@pytest.mark.parametrize("c", [0.3, 0.5, 0.8, 0.95])
def test_constant_targets_are_learned(c: float):
    trace = _constant_cosine_trace(c)
    assert np.allclose(trace.cosines(0), c)
    bsp = train_block_predictor(trace, PredictorConfig(seed=3))
    p = bsp.blocks[0]
    pred = p.predict(trace.inputs(0))
    assert np.max(np.abs(pred - c)) <= 0.05
    assert p.final_mse <= 0.5 * p.initial_mse


def test_inputs_are_standardized_with_training_statistics():
    trace = _constant_cosine_trace(0.6, seed=8)
    p = train_block_predictor(trace, PredictorConfig(epochs=2)).blocks[0]
    x = trace.inputs(0)
    assert np.allclose(p.mean, x.mean(axis=0))
    assert np.allclose(p.std, x.std(axis=0))
    assert np.allclose(p.standardize(x).mean(axis=0), 0.0, atol=1e-9)
    # a constant feature keeps unit scale instead of dividing by zero
    x_const = np.hstack([x, np.full((x.shape[0], 1), 2.0)])
    y_const = np.hstack([trace.pairs[0][1], np.zeros((x.shape[0], 1))])
    q = train_block_predictor(BlockTrace({0: (x_const, y_const)}), PredictorConfig(epochs=2)).blocks[0]
    assert q.std[-1] == 1.0
    assert np.all(np.isfinite(q.predict(x_const)))


def test_training_log_is_non_increasing_and_outputs_bounded():
    trace = _constant_cosine_trace(0.9, seed=4)
    p = train_block_predictor(trace, PredictorConfig(epochs=20, lr=0.5)).blocks[0]
    mses = [m for _, m in p.log]
    assert all(b <= a for a, b in zip(mses, mses[1:]))
    out = p.predict(SplitMix64(1).normal((50, 16)) * 100)
    assert np.all(np.abs(out) <= 1.0)


def test_training_is_seed_deterministic():
    trace = _constant_cosine_trace(0.3, seed=2)
    a = train_block_predictor(trace, PredictorConfig(seed=9, epochs=5)).blocks[0]
    b = train_block_predictor(trace, PredictorConfig(seed=9, epochs=5)).blocks[0]
    assert np.array_equal(a.params.w1, b.params.w1) and np.array_equal(a.params.w2, b.params.w2)
    assert np.array_equal(a.params.b1, b.params.b1) and a.params.b2 == b.params.b2


def test_empty_trace_raises():
    with pytest.raises(EmptyTrace):
        train_block_predictor(BlockTrace({0: (np.zeros((0, 4)), np.zeros((0, 4)))}))
    with pytest.raises(EmptyTrace):
        train_block_predictor(BlockTrace({}))


def test_block_scores_are_means_of_predictions():
    rng = SplitMix64(5)
    p = BlockPredictor(layer=0, params=_random_params(rng, 4, 3), mean=np.zeros(3), std=np.ones(3))
    bsp = BlockScorePredictor(blocks={0: p})
    x = rng.normal((1, 3))
    assert predict_block_scores(bsp, {0: x})[0] == float(p.predict(x)[0])
    xs = rng.normal((7, 3))
    once = predict_block_scores(bsp, {0: xs})[0]
    twice = predict_block_scores(bsp, {0: np.vstack([xs, xs])})[0]
    assert abs(once - twice) < 1e-12


def test_predicted_plan_picks_lowest_scores():
    model = build_model(tiny_spec(num_layers=3))
    plan = plan_predicted_blocks(model, {0: 0.9, 1: 0.1, 2: 0.5}, 1)
    assert {w.layer for w in plan.assigned_ids()} == {1}
    tied = plan_predicted_blocks(model, {0: 0.4, 1: 0.4, 2: 0.4}, 2)
    assert {w.layer for w in tied.assigned_ids()} == {0, 1}
    all_blocks = plan_predicted_blocks(model, {0: 0.2, 1: 0.3, 2: 0.1}, 3)
    assert all_blocks.assignments == plan_blocks(model, k=3, which="first").assignments
    # rank based: a monotone transform keeps the selection
    squashed = plan_predicted_blocks(model, {0: np.exp(0.9), 1: np.exp(0.1), 2: np.exp(0.5)}, 1)
    assert squashed.assignments == plan.assignments
    with pytest.raises(InvalidArgument):
        plan_predicted_blocks(model, {0: 0.1}, 1)


def test_spearman_basics():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
    assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)


def test_predictor_container_round_trips(tmp_path: Path):
    bsp = train_block_predictor(_constant_cosine_trace(0.7), PredictorConfig(epochs=3, hidden=8))
    path = save_predictor(bsp, tmp_path / "bsp.bin")
    back = load_predictor(path)
    assert dumps_predictor(back) == path.read_bytes()
    assert np.array_equal(back.blocks[0].params.w1, bsp.blocks[0].params.w1)
    assert np.array_equal(back.blocks[0].mean, bsp.blocks[0].mean) and back.blocks[0].params.b2 == bsp.blocks[0].params.b2
    x = _constant_cosine_trace(0.7).inputs(0)
    assert np.array_equal(back.blocks[0].predict(x), bsp.blocks[0].predict(x))
    assert back.blocks[0].log == bsp.blocks[0].log


def test_held_out_ranking_of_block_cosines():
    model = build_model(tiny_spec(num_layers=4, seed=21))
    model = scale_expert_down(model, {0: 0.05, 1: 3.0, 2: 0.6, 3: 1.5})
    calib = generate_calibration(seed=100, n_sequences=40, seq_len=32, vocab_size=model.spec.vocab_size)
    trace = capture_block_io(model, calib)
    train, held = trace.split(0.8)
    bsp = train_block_predictor(train, PredictorConfig(seed=0))
    for p in bsp.blocks.values():
        assert p.final_mse <= 0.5 * p.initial_mse
    predicted = predict_block_scores(bsp, {layer: held.inputs(layer) for layer in held.layers()})
    truth = held.mean_cosines()
    layers = sorted(truth)
    assert spearman([predicted[l] for l in layers], [truth[l] for l in layers]) >= 0.8
