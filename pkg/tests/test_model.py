from __future__ import annotations

import math

import numpy as np
import pytest

from core.errors import InvalidSpec, TokenOutOfRange
from core.model import (
    ExpertWeights,
    MoEBlock,
    MoEModelSpec,
    TraceSink,
    WeightId,
    build_model,
    dumps_model,
    ffn,
    forward,
    load_model,
    loads_model,
    moe_block_forward,
    route,
    save_model,
)

from tests.utils import tiny_spec


def test_build_model_is_deterministic(spec):
    a = build_model(spec)
    b = build_model(spec)
    assert np.array_equal(a.embedding, b.embedding)
    for (wa, ma), (wb, mb) in zip(a.iter_weights(), b.iter_weights()):
        assert wa == wb
        assert np.array_equal(ma, mb)


def test_build_model_rejects_invalid_spec():
    with pytest.raises(InvalidSpec):
        build_model(MoEModelSpec(vocab_size=8, hidden_dim=4, ffnn_dim=4, num_layers=1, num_experts=2, top_k=3))
    with pytest.raises(InvalidSpec):
        MoEModelSpec.from_text("vocab_size = 8\nhidden_dim = 0\nffnn_dim = 4\nnum_layers = 1\nnum_experts = 2\ntop_k = 1\n")


def test_router_shape_and_init_range():
    m = build_model(tiny_spec(hidden_dim=8, num_experts=4))
    assert m.get_weight("L0.router").shape == (4, 8)
    bound = 1.0 / math.sqrt(8)
    for _, w in m.iter_weights():
        assert np.all(np.abs(w) <= bound)


def test_weight_ids_are_unique_and_ordered(spec):
    m = build_model(tiny_spec(num_shared_experts=1, first_layer_dense=True, num_layers=3))
    ids = m.weight_ids()
    assert len(ids) == len(set(ids))
    assert ids == sorted(ids)
    assert WeightId.parse("L1.expert.3.gate") == WeightId(1, "expert", 3, "gate")
    assert str(WeightId(0, "router")) == "L0.router"
    assert WeightId(0, "router") < WeightId(0, "dense", None, "gate") < WeightId(0, "expert", 0, "gate")
    assert all(wid.kind != "router" for wid in m.quantizable_ids())
    assert [wid.kind for wid in ids if wid.layer == 0 and wid.kind == "dense"] == ["dense"] * 3


def test_route_examples():
    idx, gates = route(np.eye(3), [3.0, 1.0, 2.0], 1)
    assert idx.tolist() == [0] and gates.tolist() == [1.0]

    idx, _ = route(np.zeros((4, 2)), [1.0, -1.0], 2)
    assert idx.tolist() == [0, 1]

    idx, gates = route(np.eye(3), [2.0, 1.0, 0.0], 2)
    assert idx.tolist() == [0, 1]
    assert gates == pytest.approx([0.7311, 0.2689], abs=1e-4)
    assert gates.sum() == pytest.approx(1.0, abs=1e-15)


def _random_expert(rng: np.random.Generator, d: int, f: int) -> ExpertWeights:
    return ExpertWeights(rng.normal(size=(f, d)), rng.normal(size=(f, d)), rng.normal(size=(d, f)))


def test_all_experts_identical_equals_single_expert():
    rng = np.random.default_rng(0)
    e = _random_expert(rng, 4, 6)
    block = MoEBlock(router=rng.normal(size=(3, 4)), experts=(e, e, e), shared=(), top_k=3)
    x = rng.normal(size=(5, 4))
    assert np.allclose(moe_block_forward(block, x), ffn(e, x), atol=1e-12)


def test_zero_input_gives_zero_output():
    rng = np.random.default_rng(1)
    block = MoEBlock(
        router=rng.normal(size=(4, 3)),
        experts=tuple(_random_expert(rng, 3, 5) for _ in range(4)),
        shared=(_random_expert(rng, 3, 5),),
        top_k=2,
    )
    assert np.array_equal(moe_block_forward(block, np.zeros((2, 3))), np.zeros((2, 3)))


def test_single_expert_hand_computation():
    gate = np.array([[1.0, 0.5], [-0.5, 2.0]])
    up = np.array([[0.3, -1.0], [1.5, 0.2]])
    down = np.array([[1.0, -2.0], [0.5, 0.25]])
    block = MoEBlock(router=np.array([[1.0, 1.0]]), experts=(ExpertWeights(gate, up, down),), shared=(), top_k=1)
    x = np.array([0.7, -0.4])

    g = [0.7 * 1.0 + -0.4 * 0.5, 0.7 * -0.5 + -0.4 * 2.0]
    u = [0.7 * 0.3 + -0.4 * -1.0, 0.7 * 1.5 + -0.4 * 0.2]
    inner = [gi / (1.0 + math.exp(-gi)) * ui for gi, ui in zip(g, u)]
    expected = [inner[0] * 1.0 + inner[1] * -2.0, inner[0] * 0.5 + inner[1] * 0.25]
    assert np.allclose(moe_block_forward(block, x[None, :])[0], expected, atol=1e-9)


def test_shared_experts_always_execute():
    rng = np.random.default_rng(2)
    shared = _random_expert(rng, 3, 4)
    routed = tuple(ExpertWeights(np.zeros((4, 3)), np.zeros((4, 3)), np.zeros((3, 4))) for _ in range(2))
    block = MoEBlock(router=rng.normal(size=(2, 3)), experts=routed, shared=(shared,), top_k=1)
    x = rng.normal(size=(6, 3))
    assert np.allclose(moe_block_forward(block, x), ffn(shared, x), atol=1e-12)


def test_forward_determinism_and_trace_is_read_only(model):
    tokens = [1, 5, 9, 3]
    plain = forward(model, tokens)
    assert np.array_equal(plain, forward(model, tokens))
    sink = TraceSink()
    traced = forward(model, tokens, trace=sink)
    assert np.array_equal(plain, traced)
    assert sorted(sink.block_io) == [0, 1]
    for layer, (x_in, x_out) in sink.block_io.items():
        assert x_in.shape == (4, model.spec.hidden_dim) == x_out.shape
    for idx, _ in sink.selections.values():
        assert idx.shape == (4, model.spec.top_k)


def test_forward_is_causal(model):
    base = forward(model, [3, 1, 4, 1, 5])
    changed = forward(model, [3, 1, 4, 9, 2])
    assert np.allclose(base[:3], changed[:3], rtol=0.0, atol=1e-12)
    assert not np.allclose(base[3:], changed[3:])


def test_forward_rejects_out_of_range_tokens(model):
    with pytest.raises(TokenOutOfRange):
        forward(model, [0, model.spec.vocab_size])


def test_dequantized_weights_enter_only_through_weights(model):
    wid = WeightId(1, "expert", 2, "up")
    replaced = np.round(model.weights[wid] * 8.0) / 8.0
    a = model.with_weights({wid: replaced})
    weights = dict(model.weights)
    weights[wid] = replaced
    b = type(model).from_arrays(model.spec, model.embedding, model.head, weights)
    tokens = [0, 2, 4, 6, 8]
    assert np.array_equal(forward(a, tokens), forward(b, tokens))


def test_model_container_round_trip(tmp_path, spec):
    m = build_model(tiny_spec(num_shared_experts=1, first_layer_dense=True, router_skew=1.5))
    data = dumps_model(m)
    assert data.startswith(b"MOEQ1")
    again = loads_model(data)
    assert dumps_model(again) == data
    assert again.spec == m.spec

    path = save_model(m, tmp_path / "m.moeq")
    assert dumps_model(load_model(path)) == data


def test_spec_text_round_trip_and_hash():
    s = tiny_spec(router_skew=2.0, first_layer_dense=True)
    assert MoEModelSpec.from_text(s.to_text()) == s
    assert s.spec_hash() == MoEModelSpec.from_text(s.to_text()).spec_hash()
    assert s.spec_hash() != tiny_spec(seed=8).spec_hash()


def test_router_skew_survives_save_and_favours_expert_zero_for_any_input(tmp_path):
    m = build_model(tiny_spec(top_k=1, router_skew=2.0))
    loaded = load_model(save_model(m, tmp_path / "skewed.moeq"))
    assert loaded.spec.router_skew == 2.0
    tokens = list(range(16))
    assert np.array_equal(forward(loaded, tokens), forward(m, tokens))

    router = np.zeros((4, 3))
    for x in ([1.0, 1.0, 1.0], [-1.0, -1.0, -1.0]):
        experts, _ = route(router, x, 1, skew=2.0)
        assert experts.tolist() == [0]
