import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cgalab.neural import (BiLSTM, CHECKPOINT_MAGIC, GRUCell, Graph, MLP, MultiHeadAttention, ParamStore,
                           ShapeError, Tensor, adam_step, backward, max_relative_error, sinusoidal_encoding)
from cgalab.neural import ops as T

import gradcases


# ---------------------------------------------------------------- primitives

def test_relu_example():
    assert np.array_equal(T.relu([-1.0, 2.0]).data, [0.0, 2.0])


def test_softmax_example():
    assert np.allclose(T.softmax([0.0, 0.0]).data, [0.5, 0.5])


def test_min_with_const_example():
    assert np.allclose(T.min_with_const([0.8, 1.3], 1.0).data, [0.8, 1.0])


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_sums_to_one(xs):
    out = T.softmax(np.array(xs)).data
    assert abs(out.sum() - 1.0) < 1e-12
    assert np.all(out >= 0)


def test_softmax_is_stable_for_large_inputs():
    out = T.softmax(np.array([1000.0, 1000.0, -1000.0])).data
    assert np.all(np.isfinite(out))
    assert np.allclose(out, [0.5, 0.5, 0.0])


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ShapeError, match="matmul"):
        T.matmul(np.ones((2, 3)), np.ones((4, 2)))


def test_min_with_const_gradient_at_boundary_goes_to_constant():
    w = Tensor(np.array([0.5, 1.0, 2.0]), requires_grad=True)
    with Graph():
        backward(T.sum(T.min_with_const(w, 1.0)))
    assert np.array_equal(w.grad, [1.0, 0.0, 0.0])


def test_clamp_gradient_zero_outside():
    w = Tensor(np.array([-1.0, 0.5, 2.0]), requires_grad=True)
    with Graph():
        backward(T.sum(T.clamp(w, 0.0, 1.0)))
    assert np.array_equal(w.grad, [0.0, 1.0, 0.0])


# ---------------------------------------------------------------- backward

def test_grad_of_linear_sum_is_input():
    x = np.array([1.0, -2.0, 3.0])
    w = Tensor(np.zeros(3), requires_grad=True)
    with Graph():
        backward(T.sum(T.mul(w, x)))
    assert np.array_equal(w.grad, x)


def test_untraced_loss_raises():
    w = Tensor(np.ones(2), requires_grad=True)
    loss = T.sum(w)          # no Graph active
    with pytest.raises(RuntimeError):
        backward(loss)


def test_disconnected_parameter_grad_is_zero():
    store = ParamStore()
    a = store.add("a", np.ones(2))
    store.add("b", np.ones(2))
    err = max_relative_error(lambda: T.sum(T.mul(a, a)), store)
    assert err < 1e-6
    with Graph():
        backward(T.sum(T.mul(a, a)))
    assert store["b"].grad is None or np.all(store["b"].grad == 0)


def test_two_layer_mlp_twenty_params_gradcheck():
    rng = np.random.default_rng(0)
    store = ParamStore()
    mlp = MLP(store, "m", [3, 3, 2], ["tanh", None], rng)
    assert store.num_values() == 20
    x = rng.normal(size=(4, 3))
    assert max_relative_error(lambda: T.sum(mlp(x)), store, h=1e-5) < 1e-4


@pytest.mark.parametrize("name", sorted(gradcases.CASES))
def test_layer_gradcheck_twenty_seeds(name):
    worst = max(gradcases.worst_error(name, s) for s in range(20))
    assert worst < gradcases.TOL


def test_forward_backward_deterministic():
    grads = []
    for _ in range(2):
        store, loss = gradcases.case_bilstm(3)
        with Graph():
            backward(loss())
        grads.append({n: store[n].grad.copy() for n in store})
    for n in grads[0]:
        assert np.array_equal(grads[0][n], grads[1][n])


# ---------------------------------------------------------------- attention

def test_sinusoidal_row_zero_alternates():
    pe = sinusoidal_encoding(3, 6)
    assert np.allclose(pe[0], [0, 1, 0, 1, 0, 1])


def test_sinusoidal_formula():
    pe = sinusoidal_encoding(5, 4)
    pos, i = 3, 1
    assert np.isclose(pe[pos, 2 * i], np.sin(pos / 10000 ** (2 * i / 4)))
    assert np.isclose(pe[pos, 2 * i + 1], np.cos(pos / 10000 ** (2 * i / 4)))


def test_attention_single_row_is_projected_value():
    rng = np.random.default_rng(1)
    store = ParamStore()
    att = MultiHeadAttention(store, "a", 4, 2, rng)
    x = rng.normal(size=(1, 4))
    v = x @ store["a.v.W"].data + store["a.v.b"].data
    expected = v @ store["a.o.W"].data + store["a.o.b"].data
    out, w = att(x, return_weights=True)
    assert np.allclose(w.data, 1.0)
    assert np.allclose(out.data, expected, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_attention_row_equivariance(seed):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    att = MultiHeadAttention(store, "a", 8, 4, rng)
    x = rng.normal(size=(5, 8))
    perm = rng.permutation(5)
    assert np.max(np.abs(att(x[perm]).data - att(x).data[perm])) < 1e-9


def test_attention_with_pe_is_not_equivariant():
    rng = np.random.default_rng(0)
    store = ParamStore()
    att = MultiHeadAttention(store, "a", 8, 4, rng, positional="sinusoidal")
    x = rng.normal(size=(5, 8))
    perm = np.array([4, 3, 2, 1, 0])
    assert np.max(np.abs(att(x[perm]).data - att(x).data[perm])) > 1e-6


def test_attention_heads_must_divide_dim():
    with pytest.raises(ShapeError):
        MultiHeadAttention(ParamStore(), "a", 6, 4, np.random.default_rng(0))


# ---------------------------------------------------------------- recurrent cells

def _zero(store):
    for n in store:
        store[n].data[...] = 0.0


def test_gru_zero_params_halves_state():
    store = ParamStore()
    cell = GRUCell(store, "g", 3, 4, np.random.default_rng(0))
    _zero(store)
    s = np.array([[1.0, -2.0, 0.5, 4.0]])
    assert np.allclose(cell(s, np.ones((1, 3))).data, 0.5 * s)


def test_gru_zero_params_zero_state_stays_zero():
    store = ParamStore()
    cell = GRUCell(store, "g", 3, 4, np.random.default_rng(0))
    _zero(store)
    assert np.array_equal(cell(np.zeros((1, 4)), np.ones((1, 3))).data, np.zeros((1, 4)))


def test_bilstm_single_step_uses_same_input():
    store = ParamStore()
    bi = BiLSTM(store, "b", 3, 2, np.random.default_rng(0))
    store.copy_prefix("b.fwd.", "b.bwd.")
    hf, hb = bi(np.random.default_rng(1).normal(size=(1, 3)))
    assert np.allclose(hf.data, hb.data)


def test_bilstm_reversal_symmetry():
    rng = np.random.default_rng(2)
    s1, s2 = ParamStore(), ParamStore()
    a = BiLSTM(s1, "b", 3, 4, rng)
    b = BiLSTM(s2, "b", 3, 4, rng)
    # b's forward params are a's backward params and vice versa
    for n in s1.names("b.fwd."):
        s2["b.bwd." + n[len("b.fwd."):]].data[...] = s1[n].data
    for n in s1.names("b.bwd."):
        s2["b.fwd." + n[len("b.bwd."):]].data[...] = s1[n].data
    x = rng.normal(size=(2, 5, 3))
    hf_a, hb_a = a(x)
    hf_b, hb_b = b(x[:, ::-1])
    assert np.allclose(hf_b.data, hb_a.data[:, ::-1], atol=1e-12)
    assert np.allclose(hb_b.data, hf_a.data[:, ::-1], atol=1e-12)


def test_lstm_forget_bias_init():
    store = ParamStore()
    BiLSTM(store, "b", 3, 4, np.random.default_rng(0))
    b = store["b.fwd.b"].data
    assert np.array_equal(b[4:8], np.ones(4))
    assert np.count_nonzero(b) == 4


def test_init_is_uniform_in_fan_in_bound():
    store = ParamStore()
    MLP(store, "m", [16, 8], [None], np.random.default_rng(0))
    W = store["m.0.W"].data
    assert np.abs(W).max() <= 1 / np.sqrt(16)
    assert np.all(store["m.0.b"].data == 0)


# ---------------------------------------------------------------- Adam

def test_adam_zero_gradient_leaves_params():
    store = ParamStore()
    w = store.add("w", np.array([1.0, -2.0]))
    w.grad = np.zeros(2)
    adam_step(store, lr=0.1)
    assert np.array_equal(w.data, [1.0, -2.0])
    assert w.grad is None


def test_adam_constant_gradient_step_size():
    store = ParamStore()
    w = store.add("w", np.array([0.0]))
    for _ in range(200):
        w.grad = np.array([3.0])
        before = w.data.copy()
        adam_step(store, lr=1e-2)
    assert np.isclose(before - w.data, 1e-2 * 3.0 / (3.0 + 1e-8), rtol=1e-6).all()


def test_adam_quadratic_bowl():
    store = ParamStore()
    w = store.add("w", np.array([1.0]))
    for _ in range(500):
        with Graph():
            backward(T.sum(T.mul(w, w)))
        adam_step(store, lr=1e-2)
    assert abs(w.data[0]) < 1e-2


def test_adam_skips_frozen():
    store = ParamStore()
    a = store.add("a.w", np.array([1.0]))
    b = store.add("b.w", np.array([1.0]))
    store.freeze("a.")
    with Graph():
        backward(T.add(T.sum(T.mul(a, a)), T.sum(T.mul(b, b))))
    adam_step(store, lr=0.1)
    assert a.data[0] == 1.0 and b.data[0] < 1.0


# ---------------------------------------------------------------- ParamStore

def test_duplicate_names_rejected():
    store = ParamStore()
    store.add("x", np.zeros(1))
    with pytest.raises(KeyError):
        store.add("x", np.zeros(1))


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    s1 = ParamStore()
    MLP(s1, "m", [3, 4, 1], ["relu", None], rng)
    path = tmp_path / "ck.json"
    s1.save(path)
    body = json.loads(path.read_text())
    assert body["magic"] == CHECKPOINT_MAGIC == "AFORGE1"
    s2 = ParamStore()
    MLP(s2, "m", [3, 4, 1], ["relu", None], np.random.default_rng(9))
    s2.load(path)
    for n in s1:
        assert np.array_equal(s1[n].data, s2[n].data)
    assert path.read_text() == s2.to_json()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"magic": "NOPE", "params": {}}))
    with pytest.raises(ValueError, match="magic"):
        ParamStore().load(path)


def test_checkpoint_shape_mismatch(tmp_path):
    s1 = ParamStore()
    s1.add("w", np.zeros((2, 3)))
    s1.save(tmp_path / "a.json")
    s2 = ParamStore()
    s2.add("w", np.zeros((3, 2)))
    with pytest.raises(ValueError, match="shape"):
        s2.load(tmp_path / "a.json")


def test_checkpoint_unknown_name_strict(tmp_path):
    s1 = ParamStore()
    s1.add("w", np.zeros(2))
    s1.save(tmp_path / "a.json")
    with pytest.raises(KeyError):
        ParamStore().load(tmp_path / "a.json")
    ParamStore().load(tmp_path / "a.json", strict=False)


def test_moments_match_parameter_shapes():
    store = ParamStore()
    MLP(store, "m", [2, 3], [None], np.random.default_rng(0))
    for n in store:
        assert store._m[n].shape == store[n].shape == store._v[n].shape
