import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from topo_ensemble import autodiff as ad
from topo_ensemble.autodiff import ShapeMismatch, Tensor, finite_difference_check
from topo_ensemble.graphgen import SensorGraph, propagation_operator
from topo_ensemble.neural import (AttentionParams, ConvEncoderParams, DenseParams, EmptyEnsemble, GcnLayerParams,
                                  GruEncoderParams, MlpParams, SeriesTooShort, attention_aggregate,
                                  conv1d_encoder, gcn_layer, gru_encoder, max_aggregate, mean_aggregate, mlp)


def random_operator(rng, n):
    edges = [(i, j, float(rng.uniform(0.1, 1))) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.5]
    return propagation_operator(SensorGraph(n, edges))


def probe_loss(out, rng):
    return ad.sum(out * Tensor(rng.normal(size=out.shape)))


# ---------------------------------------------------------------- GCN

def test_gcn_edgeless_is_dense_per_node():
    rng = np.random.default_rng(0)
    H = rng.normal(size=(5, 3))
    p = GcnLayerParams(Tensor(rng.normal(size=(3, 2))), "identity")
    out = gcn_layer(H, propagation_operator(SensorGraph(5, [])), p)
    assert np.allclose(out.data, H @ p.W.data, atol=1e-15)


def test_gcn_two_nodes():
    op = propagation_operator(SensorGraph(2, [(0, 1, 1.0)]))
    out = gcn_layer(np.array([[1.0], [0.0]]), op, GcnLayerParams(Tensor([[1.0]]), "identity"))
    assert np.allclose(out.data, [[0.5], [0.5]])


def test_gcn_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        gcn_layer(np.zeros((4, 3)), np.eye(5), GcnLayerParams(Tensor(np.zeros((3, 2)))))


def test_gcn_edgeless_equivariance():
    rng = np.random.default_rng(1)
    H = rng.normal(size=(6, 4))
    p = GcnLayerParams(Tensor(rng.normal(size=(4, 3))), "relu")
    op = propagation_operator(SensorGraph(6, []))
    perm = rng.permutation(6)
    assert np.allclose(gcn_layer(H[perm], op, p).data, gcn_layer(H, op, p).data[perm], atol=1e-14)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("act", ["relu", "tanh", "identity"])
def test_gcn_gradient(seed, act):
    rng = np.random.default_rng(seed)
    op = random_operator(rng, 5)
    H = Tensor(rng.normal(size=(2, 5, 4)))
    p = GcnLayerParams.init(rng, 4, 3, act)
    probe = Tensor(rng.normal(size=(2, 5, 3)))
    f = lambda: ad.mean(gcn_layer(H, op, p) * probe)
    assert finite_difference_check(f, [H, p.W]) < 1e-4


# ---------------------------------------------------------------- Conv1D encoder

def test_conv_encoder_zero_input():
    p = ConvEncoderParams.init(np.random.default_rng(0), 3, (4, 5), 3)
    out = conv1d_encoder(np.zeros((2, 4, 10, 3)), p)
    assert out.shape == (2, 4, 5) and np.all(out.data == 0)


def test_conv_encoder_passthrough():
    # width-1 single-channel identity kernels: output is the time mean of relu(x)
    p = ConvEncoderParams([Tensor(np.ones((1, 1, 1))), Tensor(np.ones((1, 1, 1)))],
                          [Tensor(np.zeros(1)), Tensor(np.zeros(1))])
    x = np.abs(np.random.default_rng(1).normal(size=(3, 7, 1)))
    assert np.allclose(conv1d_encoder(x, p).data[:, 0], x.mean(axis=1)[:, 0])


def test_conv_encoder_too_short():
    p = ConvEncoderParams.init(np.random.default_rng(0), 3, (4, 4), 9)
    assert p.receptive_field == 17
    with pytest.raises(SeriesTooShort):
        conv1d_encoder(np.zeros((2, 16, 3)), p)


@pytest.mark.parametrize("seed", range(10))
def test_conv_encoder_gradient(seed):
    rng = np.random.default_rng(seed)
    p = ConvEncoderParams.init(rng, 2, (3, 4), 3)
    x = Tensor(rng.normal(size=(2, 3, 9, 2)))
    probe = Tensor(rng.normal(size=(2, 3, 4)))
    f = lambda: ad.sum(conv1d_encoder(x, p) * probe)
    assert finite_difference_check(f, [x] + p.parameters()) < 1e-4


# ---------------------------------------------------------------- GRU encoder

def test_gru_empty_sequence():
    p = GruEncoderParams.init(np.random.default_rng(0), 1, 6, 4)
    out = gru_encoder(np.zeros((2, 0, 3, 1)), p)
    assert out.shape == (2, 3, 6) and np.all(out.data == 0)


def test_gru_open_gate_zero_candidate_stays_zero():
    p = GruEncoderParams.init(np.random.default_rng(0), 1, 5, 3)
    for t in (p.Wn, p.Un, p.bn):
        t.data[...] = 0.0
    p.bz.data[...] = 50.0  # update gate saturated
    x = np.random.default_rng(1).normal(size=(2, 7, 4, 1))
    assert np.allclose(gru_encoder(x, p).data, 0.0)


def test_gru_shape_mismatch():
    p = GruEncoderParams.init(np.random.default_rng(0), 2, 5, 3)
    with pytest.raises(ShapeMismatch):
        gru_encoder(np.zeros((2, 4, 3, 1)), p)


@pytest.mark.parametrize("seed", range(10))
def test_gru_gradient(seed):
    rng = np.random.default_rng(seed)
    p = GruEncoderParams.init(rng, 1, 4, 3)
    x = Tensor(rng.normal(size=(2, 5, 3, 1)))
    probe = Tensor(rng.normal(size=(2, 3, 4)))
    f = lambda: ad.sum(gru_encoder(x, p) * probe)
    assert finite_difference_check(f, [x] + p.parameters()) < 1e-4


# ---------------------------------------------------------------- MLP

def test_mlp_zero_and_identity():
    zero = MlpParams([DenseParams(Tensor(np.zeros((3, 2))), Tensor(np.zeros(2)), "relu")])
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert np.all(mlp(x, zero).data == 0)
    ident = MlpParams([DenseParams(Tensor(np.eye(3)), Tensor(np.zeros(3)), "identity")])
    assert np.array_equal(mlp(x, ident).data, x)


def test_mlp_shape_mismatch():
    p = MlpParams.init(np.random.default_rng(0), [3, 2])
    with pytest.raises(ShapeMismatch):
        mlp(np.zeros((4, 5)), p)


@pytest.mark.parametrize("seed", range(10))
def test_mlp_gradient(seed):
    rng = np.random.default_rng(seed)
    p = MlpParams.init(rng, [4, 6, 6, 2], hidden_activation="tanh")
    x = Tensor(rng.normal(size=(3, 5, 4)))
    probe = Tensor(rng.normal(size=(3, 5, 2)))
    f = lambda: ad.sum(mlp(x, p) * probe)
    assert finite_difference_check(f, [x] + p.parameters()) < 1e-4


# ---------------------------------------------------------------- aggregators

def test_attention_single_member():
    z = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
    fused, alpha = attention_aggregate([z])
    assert fused.data.tobytes() == z.data.tobytes()
    assert np.all(alpha.data == 1.0)
    p = AttentionParams.init(np.random.default_rng(1), 3)
    fused, alpha = attention_aggregate([z], [z], p)
    assert np.array_equal(fused.data, z.data) and np.all(alpha.data == 1.0)


def test_attention_identical_members_is_mean():
    rng = np.random.default_rng(2)
    h = Tensor(rng.normal(size=(4, 3)))
    z1, z2 = Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(4, 3)))
    fused, alpha = attention_aggregate([h, h], [z1, z2], AttentionParams.init(rng, 3))
    assert np.all(alpha.data == 0.5)
    assert np.allclose(fused.data, mean_aggregate([z1, z2]).data, atol=1e-12)


def test_aggregators_reject_empty():
    for fn in (lambda: attention_aggregate([]), lambda: mean_aggregate([]), lambda: max_aggregate([])):
        with pytest.raises(EmptyEnsemble):
            fn()


def test_mean_and_max_values():
    zero, one = Tensor(np.zeros((2, 3))), Tensor(np.ones((2, 3)))
    assert np.all(mean_aggregate([zero, one]).data == 0.5)
    assert np.all(max_aggregate([zero, one]).data == 1.0)
    assert np.array_equal(mean_aggregate([one]).data, one.data)
    assert np.array_equal(max_aggregate([one]).data, one.data)


def test_max_tie_goes_to_first_member():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((2, 2)), requires_grad=True)
    ad.backward(ad.sum(max_aggregate([a, b])))
    assert np.all(a.grad == 1) and (b.grad is None or np.all(b.grad == 0))


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("scores", ["vector", "scalar"])
def test_attention_gradient(seed, scores):
    rng = np.random.default_rng(seed)
    H = [Tensor(rng.normal(size=(2, 4, 3))) for _ in range(3)]
    p = AttentionParams.init(rng, 3, scores)
    probe = Tensor(rng.normal(size=(2, 4, 3)))
    f = lambda: ad.sum(attention_aggregate(H, H, p)[0] * probe)
    assert finite_difference_check(f, H + [p.W_att]) < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_mean_max_gradient(seed):
    rng = np.random.default_rng(seed)
    Z = [Tensor(rng.normal(size=(4, 3))) for _ in range(3)]
    probe = Tensor(rng.normal(size=(4, 3)))
    assert finite_difference_check(lambda: ad.sum(mean_aggregate(Z) * probe), Z) < 1e-4
    assert finite_difference_check(lambda: ad.sum(max_aggregate(Z) * probe), Z) < 1e-4


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(0, 2**32 - 1), st.sampled_from(["vector", "scalar"]))
def test_attention_weights_on_simplex(m, seed, scores):
    rng = np.random.default_rng(seed)
    H = [Tensor(rng.normal(size=(3, 5, 4)) * 3) for _ in range(m)]
    p = AttentionParams.init(rng, 4, scores) if m > 1 else None
    _, alpha = attention_aggregate(H, H, p)
    assert np.all((alpha.data > 0) & (alpha.data <= 1))
    assert np.allclose(alpha.data.sum(axis=0), 1.0, atol=1e-6)


def test_attention_equal_scores_equals_mean():
    rng = np.random.default_rng(5)
    H = [Tensor(np.zeros((3, 4))) for _ in range(4)]
    Z = [Tensor(rng.normal(size=(3, 4))) for _ in range(4)]
    fused, _ = attention_aggregate(H, Z, AttentionParams.init(rng, 4))
    assert np.allclose(fused.data, mean_aggregate(Z).data, atol=1e-12)
