import logging

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from dynkt import layers as L
from dynkt import tensor as T
from dynkt.errors import ShapeError
from dynkt.serialize import dump_arrays, load_arrays
from dynkt.tensor import Tensor, backward, grad_check, param_grad_check


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# ---------------------------------------------------------------- embedding

def test_pad_row_is_zero(rng):
    emb = L.Embedding(5, 100, rng)
    np.testing.assert_array_equal(emb([[0]]).data, np.zeros((1, 1, 100)))


def test_repeated_lookup_gives_identical_rows(rng):
    out = L.Embedding(5, 100, rng)([[3, 3]]).data
    np.testing.assert_array_equal(out[0, 0], out[0, 1])
    assert out.shape == (1, 2, 100)


def test_embedding_gradient_scatters_to_looked_up_rows(rng):
    emb = L.Embedding(5, 4, rng)
    backward(emb([[3, 3]]).sum())
    expected = np.zeros((6, 4))
    expected[3] = 2.0
    np.testing.assert_array_equal(emb.weight.grad, expected)


def test_pad_row_receives_no_gradient(rng):
    emb = L.Embedding(5, 4, rng)
    backward(emb([[0, 0, 2]]).sum())
    assert not emb.weight.grad[0].any()


def test_embedding_id_out_of_range(rng):
    emb = L.Embedding(5, 4, rng)
    with pytest.raises(IndexError, match="6"):
        emb([[1, 6]])


def test_embedding_warns_on_unusual_dim(rng, caplog):
    with caplog.at_level(logging.WARNING):
        L.Embedding(5, 7, rng)
    assert "7" in caplog.text
    caplog.clear()
    with caplog.at_level(logging.WARNING):
        L.Embedding(5, 300, rng)
    assert caplog.text == ""


# ---------------------------------------------------------------- dropout

@pytest.mark.parametrize("fn", [L.spatial_dropout1d, L.gaussian_dropout])
def test_dropout_rate_zero_is_identity(fn, rng):
    x = Tensor(rng.normal(size=(2, 4, 3)))
    np.testing.assert_array_equal(fn(x, 0.0, True, rng).data, x.data)


@pytest.mark.parametrize("fn", [L.spatial_dropout1d, L.gaussian_dropout])
def test_dropout_inference_is_identity(fn, rng):
    x = Tensor(rng.normal(size=(2, 4, 3)))
    np.testing.assert_array_equal(fn(x, 0.9, False, rng).data, x.data)


@pytest.mark.parametrize("fn", [L.spatial_dropout1d, L.gaussian_dropout])
@pytest.mark.parametrize("rate", [1.0, 1.5, -0.1])
def test_dropout_rejects_bad_rate(fn, rate, rng):
    with pytest.raises(ValueError):
        fn(Tensor(np.ones((1, 2, 2))), rate, True, rng)


def test_spatial_dropout_mask_constant_over_time_and_fraction():
    rng = np.random.default_rng(42)
    ones = Tensor(np.ones((1, 4, 6)))
    zeroed = 0
    trials = 10_000
    for _ in range(trials):
        out = L.spatial_dropout1d(ones, 0.5, True, rng).data[0]
        assert (out == out[0]).all()
        assert set(np.unique(out)) <= {0.0, 2.0}
        zeroed += int((out[0] == 0).sum())
    assert abs(zeroed / (trials * 6) - 0.5) <= 0.02


def test_gaussian_dropout_moments():
    out = L.gaussian_dropout(Tensor(np.ones(100_000)), 0.5, True, np.random.default_rng(1)).data
    assert abs(out.mean() - 1.0) <= 0.02
    assert abs(out.std() - 1.0) <= 0.02


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 0.95), st.integers(0, 2**32 - 1))
def test_spatial_dropout_columns_uniform(rate, seed):
    rng = np.random.default_rng(seed)
    out = L.spatial_dropout1d(Tensor(np.ones((3, 5, 4))), rate, True, rng).data
    assert (out == out[:, :1, :]).all()


# ---------------------------------------------------------------- conv1d

def test_conv_delta_kernel_is_identity():
    x = Tensor(np.random.default_rng(2).normal(size=(2, 5, 1)))
    w = Tensor(np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1))
    np.testing.assert_array_equal(L.conv1d(x, w, Tensor(np.zeros(1))).data, x.data)


def test_conv_all_ones_kernel():
    x = Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1))
    out = L.conv1d(x, Tensor(np.ones((3, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data.ravel(), [3.0, 6.0, 5.0])


def test_conv_matches_direct_formula(rng):
    conv = L.Conv1D(4, 3, 5, rng)
    conv.bias.data[:] = rng.normal(size=3)
    x = rng.normal(size=(2, 7, 4))
    padded = np.pad(x, ((0, 0), (2, 2), (0, 0)))
    w = conv.weight.data
    expected = np.zeros((2, 7, 3))
    for t in range(7):
        for k in range(5):
            expected[:, t] += padded[:, t + k] @ w[k]
    expected += conv.bias.data
    np.testing.assert_allclose(conv(Tensor(x)).data, expected, rtol=1e-12, atol=1e-12)


def test_conv_gradients(rng):
    conv = L.Conv1D(4, 3, 3, rng)
    x = rng.uniform(-2, 2, size=(2, 7, 4))
    proj = Tensor(rng.normal(size=(2, 7, 3)))
    assert grad_check(lambda v: (conv(v) * proj).sum(), x) <= 1e-5
    for res in param_grad_check(lambda: (conv(Tensor(x)) * proj).sum(), conv.parameters()).values():
        assert res.max_error <= 1e-5


def test_conv_even_kernel_rejected(rng):
    with pytest.raises(ValueError, match="odd"):
        L.Conv1D(2, 2, 4, rng)


def test_conv_empty_time_axis_rejected(rng):
    conv = L.Conv1D(2, 2, 3, rng)
    with pytest.raises(ShapeError):
        conv(Tensor(np.zeros((1, 0, 2))))


# ---------------------------------------------------------------- batchnorm

def test_batchnorm_already_normalized_input_passes_through():
    x = np.random.default_rng(3).normal(size=(8, 10, 3))
    x = (x - x.mean(axis=(0, 1))) / x.std(axis=(0, 1))
    # default eps rescales by 1/sqrt(1 + eps) exactly
    out = L.BatchNorm1D(3)(Tensor(x), training=True).data
    np.testing.assert_allclose(out, x / np.sqrt(1 + L.BN_EPS), rtol=1e-12, atol=1e-12)
    # with eps small enough that the rescale is invisible, output matches input to 1e-6
    out = L.BatchNorm1D(3, eps=1e-9)(Tensor(x), training=True).data
    np.testing.assert_allclose(out, x, rtol=0, atol=1e-6)


def test_batchnorm_zero_scale_outputs_shift():
    bn = L.BatchNorm1D(3)
    bn.gamma.data[:] = 0.0
    bn.beta.data[:] = 5.0
    out = bn(Tensor(np.random.default_rng(4).normal(size=(4, 6, 3))), training=True).data
    np.testing.assert_array_equal(out, np.full((4, 6, 3), 5.0))


def test_batchnorm_training_moments():
    # eps shrinks the output variance to s2/(s2+eps); keep s2 large enough for a 1e-6 band
    x = np.random.default_rng(5).normal(scale=10.0, size=(16, 20, 4)) + 3.0
    out = L.BatchNorm1D(4)(Tensor(x), training=True).data
    assert np.abs(out.mean(axis=(0, 1))).max() <= 1e-10
    assert np.abs(out.var(axis=(0, 1)) - 1.0).max() <= 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1.0, 100.0))
def test_batchnorm_moment_invariant(seed, scale):
    x = np.random.default_rng(seed).normal(scale=scale, size=(4, 6, 3))
    assume(x.var(axis=(0, 1)).min() >= 1.0)
    out = L.BatchNorm1D(3)(Tensor(x), training=True).data
    assert np.abs(out.mean(axis=(0, 1))).max() <= 1e-8
    assert np.abs(out.var(axis=(0, 1)) - 1.0).max() <= 1e-5


def test_batchnorm_running_stats_update_and_inference():
    bn = L.BatchNorm1D(2)
    x = np.random.default_rng(6).normal(loc=2.0, scale=3.0, size=(5, 4, 2))
    bn(Tensor(x), training=True)
    mu, var = x.mean(axis=(0, 1)), x.var(axis=(0, 1))
    np.testing.assert_allclose(bn.running_mean, 0.1 * mu, rtol=1e-12)
    np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * var, rtol=1e-12)
    out = bn(Tensor(x), training=False).data
    np.testing.assert_allclose(out, (x - bn.running_mean) / np.sqrt(bn.running_var + L.BN_EPS), rtol=1e-12)
    assert (bn.running_var > 0).all()


def test_batchnorm_singleton_training_batch_rejected():
    with pytest.raises(ValueError):
        L.BatchNorm1D(2)(Tensor(np.ones((1, 1, 2))), training=True)


def test_batchnorm_gradients(rng):
    bn = L.BatchNorm1D(3)
    bn.gamma.data[:] = rng.uniform(-2, 2, 3)
    x = rng.uniform(-2, 2, size=(2, 5, 3))
    proj = Tensor(rng.normal(size=(2, 5, 3)))
    fn = lambda v: (bn(v, training=True, update_stats=False) * proj).sum()
    assert grad_check(fn, x) <= 1e-5


# ---------------------------------------------------------------- dense

def test_dense_identity():
    x = Tensor(np.random.default_rng(7).normal(size=(3, 4)))
    out = L.dense(x, Tensor(np.eye(4)), Tensor(np.zeros(4)), "none")
    np.testing.assert_array_equal(out.data, x.data)


def test_dense_sigmoid_of_zero():
    out = L.dense(Tensor([[1.0, 1.0]]), Tensor([[1.0], [1.0]]), Tensor([-2.0]), "sigmoid")
    np.testing.assert_array_equal(out.data, [[0.5]])


def test_dense_gradients(rng):
    layer = L.Dense(6, 3, rng, "sigmoid")
    layer.bias.data[:] = rng.normal(size=3)
    x = rng.uniform(-2, 2, size=(4, 6))
    proj = Tensor(rng.normal(size=(4, 3)))
    assert grad_check(lambda v: (layer(v) * proj).sum(), x) <= 1e-6
    for res in param_grad_check(lambda: (layer(Tensor(x)) * proj).sum(), layer.parameters()).values():
        assert res.max_error <= 1e-6


def test_dense_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        L.Dense(6, 3, rng)(Tensor(np.ones((2, 5))))


def test_dense_unknown_activation(rng):
    with pytest.raises(ValueError):
        L.Dense(2, 2, rng, "softmax")


# ---------------------------------------------------------------- GRU

def _zero_cell(c=3, h=4):
    cell = L.GRUCell(c, h, np.random.default_rng(0))
    for p in cell.parameters().values():
        p.data[...] = 0.0
    return cell


def test_gru_zero_parameters_halve_state():
    h_prev = np.random.default_rng(8).normal(size=(2, 4))
    out = _zero_cell()(Tensor(np.ones((2, 3))), Tensor(h_prev)).data
    np.testing.assert_array_equal(out, 0.5 * h_prev)


def test_gru_zero_parameters_zero_state_stays_zero():
    out = _zero_cell()(Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 4)))).data
    np.testing.assert_array_equal(out, np.zeros((2, 4)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gru_zero_parameters_contract(seed):
    rng = np.random.default_rng(seed)
    h_prev = rng.normal(size=(3, 4)) * 10
    out = _zero_cell()(Tensor(rng.normal(size=(3, 3))), Tensor(h_prev)).data
    assert np.linalg.norm(out) <= np.linalg.norm(h_prev)


def test_gru_cell_matches_gate_equations(rng):
    cell = L.GRUCell(3, 2, rng)
    cell.b.data[:] = rng.normal(size=6)
    x, h = rng.normal(size=(1, 3)), rng.normal(size=(1, 2))
    W, U, b = cell.W.data, cell.U.data, cell.b.data
    sig = lambda a: 1 / (1 + np.exp(-a))
    z = sig(x @ W[:, :2] + h @ U[:, :2] + b[:2])
    r = sig(x @ W[:, 2:4] + h @ U[:, 2:4] + b[2:4])
    cand = np.tanh(x @ W[:, 4:] + (r * h) @ U[:, 4:] + b[4:])
    np.testing.assert_allclose(cell(Tensor(x), Tensor(h)).data, (1 - z) * h + z * cand, rtol=1e-12)


def test_gru_gradient_through_three_steps(rng):
    cell = L.GRUCell(3, 4, rng)
    cell.b.data[:] = rng.uniform(-2, 2, 12)
    xs = rng.uniform(-2, 2, size=(3, 2, 3))

    def fn(h0):
        h = h0
        for x in xs:
            h = cell(Tensor(x), h)
        return h.sum()

    h0 = rng.uniform(-2, 2, size=(2, 4))
    assert grad_check(fn, h0) <= 1e-5
    for res in param_grad_check(lambda: fn(Tensor(h0)), cell.parameters()).values():
        assert res.max_error <= 1e-5


def test_recurrent_matrices_are_orthogonal(rng):
    cell = L.GRUCell(3, 5, rng)
    for g in range(3):
        block = cell.U.data[:, 5 * g:5 * (g + 1)]
        np.testing.assert_allclose(block.T @ block, np.eye(5), atol=1e-12)


@pytest.mark.parametrize("reverse", [False, True])
def test_fused_scan_matches_composed_reference(reverse, rng):
    cell = L.GRUCell(3, 4, rng)
    cell.b.data[:] = rng.normal(size=12)
    x = rng.normal(size=(2, 6, 3))
    fused = L.gru_sequence(Tensor(x), cell, reverse=reverse).data
    ref = np.stack([s.data for s in L.gru_sequence_reference(Tensor(x), cell, reverse=reverse)], axis=1)
    np.testing.assert_allclose(fused, ref, rtol=1e-13, atol=1e-14)


@pytest.mark.parametrize("reverse", [False, True])
def test_fused_scan_gradients_match_reference(reverse, rng):
    cell = L.GRUCell(3, 4, rng)
    x = rng.normal(size=(2, 5, 3))
    proj = rng.normal(size=(2, 5, 4))

    def grads(use_fused):
        for p in cell.parameters().values():
            p.grad = None
        xt = Tensor(x, requires_grad=True)
        if use_fused:
            seq = L.gru_sequence(xt, cell, reverse=reverse)
        else:
            seq = T.stack(L.gru_sequence_reference(xt, cell, reverse=reverse), axis=1)
        backward((seq * Tensor(proj)).sum())
        return [xt.grad] + [p.grad.copy() for p in cell.parameters().values()]

    for a, b in zip(grads(True), grads(False)):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


# ---------------------------------------------------------------- bigru

def test_bigru_single_step(rng):
    layer = L.BiGRU(3, 2, rng)
    x = rng.normal(size=(2, 1, 3))
    seq, last = layer(Tensor(x))
    assert seq.shape == (2, 1, 4)
    h0 = Tensor(np.zeros((2, 2)))
    np.testing.assert_allclose(seq.data[:, 0, :2], layer.fwd(Tensor(x[:, 0]), h0).data, rtol=1e-13)
    np.testing.assert_allclose(seq.data[:, 0, 2:], layer.bwd(Tensor(x[:, 0]), h0).data, rtol=1e-13)
    np.testing.assert_array_equal(last.data, seq.data[:, 0])


def test_bigru_last_state_pairs_terminal_states(rng):
    layer = L.BiGRU(3, 2, rng)
    seq, last = layer(Tensor(rng.normal(size=(2, 5, 3))))
    np.testing.assert_array_equal(last.data[:, :2], seq.data[:, -1, :2])
    np.testing.assert_array_equal(last.data[:, 2:], seq.data[:, 0, 2:])


def test_bigru_reversal_symmetry(rng):
    layer = L.BiGRU(3, 2, rng)
    x = rng.normal(size=(2, 6, 3))
    seq, _ = layer(Tensor(x))
    swapped = L.BiGRU(3, 2, rng)
    swapped.fwd, swapped.bwd = layer.bwd, layer.fwd
    seq_rev, _ = swapped(Tensor(x[:, ::-1].copy()))
    expected = np.concatenate([seq.data[:, ::-1, 2:], seq.data[:, ::-1, :2]], axis=2)
    np.testing.assert_allclose(seq_rev.data, expected, rtol=1e-13, atol=1e-15)


def test_bigru_gradients(rng):
    layer = L.BiGRU(3, 2, rng)
    x = rng.uniform(-2, 2, size=(1, 4, 3))
    proj = Tensor(rng.normal(size=(1, 4, 4)))

    def fn(v):
        seq, last = layer(v)
        return (seq * proj).sum() + last.sum()

    assert grad_check(fn, x) <= 1e-5
    for res in param_grad_check(lambda: fn(Tensor(x)), layer.parameters()).values():
        assert res.max_error <= 1e-5


def test_bigru_empty_sequence_rejected(rng):
    with pytest.raises(ShapeError):
        L.BiGRU(3, 2, rng)(Tensor(np.zeros((1, 0, 3))))


# ---------------------------------------------------------------- serialization

def test_state_dict_round_trip_through_container(rng):
    layer = L.BiGRU(3, 2, rng)
    bn = L.BatchNorm1D(3)
    bn(Tensor(rng.normal(size=(4, 5, 3))), training=True)
    for module in (layer, bn):
        state = module.state_dict()
        restored = load_arrays(dump_arrays(state))
        assert list(restored) == list(state)
        for k in state:
            assert restored[k].tobytes() == state[k].tobytes()
            assert restored[k].shape == state[k].shape


def test_container_layout_is_documented_bytes():
    blob = dump_arrays({"w": np.array([[1.0, 2.0]])})
    assert blob[:8] == b"DKTPARAM"
    assert blob[8:16] == (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
    assert blob[16:18] == (1).to_bytes(2, "little") and blob[18:19] == b"w"
    assert blob[19] == 2
    assert blob[20:36] == (1).to_bytes(8, "little") + (2).to_bytes(8, "little")
    assert np.frombuffer(blob[36:], "<f8").tolist() == [1.0, 2.0]


def test_load_state_dict_rejects_wrong_shape(rng):
    layer = L.Dense(3, 2, rng)
    state = layer.state_dict()
    state["weight"] = np.zeros((2, 2))
    with pytest.raises(ShapeError):
        layer.load_state_dict(state)
