"""Layers of the graph ensemble: temporal encoders, GCN, MLP heads and aggregators.

All layers are plain functions over :class:`~topo_ensemble.autodiff.Tensor`
with their parameters held in small dataclasses. Leading batch axes are
carried through: node features are ``(..., N, F)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor

ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh, "sigmoid": ad.sigmoid, "identity": ad.identity}


class EmptyEnsemble(ValueError):
    pass


class SeriesTooShort(ValueError):
    pass


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, name=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True, name=name)


def zeros(shape, name=None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


# ---------------------------------------------------------------- parameters

@dataclass
class GcnLayerParams:
    W: Tensor
    activation: str = "relu"

    def parameters(self):
        return [self.W]

    @classmethod
    def init(cls, rng, f_in, f_out, activation="relu"):
        return cls(glorot(rng, f_in, f_out, name="gcn.W"), activation)


@dataclass
class DenseParams:
    W: Tensor
    b: Tensor
    activation: str = "identity"

    def parameters(self):
        return [self.W, self.b]

    @classmethod
    def init(cls, rng, f_in, f_out, activation="identity"):
        return cls(glorot(rng, f_in, f_out, name="dense.W"), zeros((f_out,), name="dense.b"), activation)


@dataclass
class ConvEncoderParams:
    """Stack of valid 1-D convolutions, ReLU after each, mean-pooled over time."""

    kernels: list[Tensor]
    biases: list[Tensor]

    def parameters(self):
        return [t for pair in zip(self.kernels, self.biases) for t in pair]

    @property
    def receptive_field(self) -> int:
        return 1 + int(np.sum([k.shape[0] - 1 for k in self.kernels]))

    @property
    def out_features(self) -> int:
        return self.kernels[-1].shape[2]

    @classmethod
    def init(cls, rng, in_channels, channels=(32, 64), kernel_size=9):
        kernels, biases = [], []
        c_in = in_channels
        for c_out in channels:
            kernels.append(glorot(rng, kernel_size * c_in, kernel_size * c_out,
                                  shape=(kernel_size, c_in, c_out), name="conv.W"))
            biases.append(zeros((c_out,), name="conv.b"))
            c_in = c_out
        return cls(kernels, biases)


@dataclass
class GruEncoderParams:
    """Input projection followed by a single GRU layer."""

    proj: DenseParams
    Wz: Tensor
    Wr: Tensor
    Wn: Tensor
    Uz: Tensor
    Ur: Tensor
    Un: Tensor
    bz: Tensor
    br: Tensor
    bn: Tensor

    def parameters(self):
        return self.proj.parameters() + [self.Wz, self.Wr, self.Wn, self.Uz, self.Ur, self.Un,
                                         self.bz, self.br, self.bn]

    @property
    def hidden(self) -> int:
        return self.Uz.shape[0]

    @property
    def out_features(self) -> int:
        return self.hidden

    @classmethod
    def init(cls, rng, in_features, hidden=64, proj=16):
        p = DenseParams.init(rng, in_features, proj)
        Ws = [glorot(rng, proj, hidden, name=f"gru.W{g}") for g in "zrn"]
        Us = [glorot(rng, hidden, hidden, name=f"gru.U{g}") for g in "zrn"]
        bs = [zeros((hidden,), name=f"gru.b{g}") for g in "zrn"]
        return cls(p, *Ws, *Us, *bs)


@dataclass
class AttentionParams:
    """Score projection shared by all ensemble members.

    ``W_att`` is ``F x F`` (one score per feature) or ``F x 1`` (one score
    per node).
    """

    W_att: Tensor

    def parameters(self):
        return [self.W_att]

    @classmethod
    def init(cls, rng, features, scores="vector"):
        out = features if scores == "vector" else 1
        return cls(glorot(rng, features, out, name="att.W"))


@dataclass
class MlpParams:
    layers: list[DenseParams] = field(default_factory=list)

    def parameters(self):
        return [t for layer in self.layers for t in layer.parameters()]

    @classmethod
    def init(cls, rng, sizes, hidden_activation="relu", out_activation="identity"):
        layers = []
        for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = out_activation if k == len(sizes) - 2 else hidden_activation
            layers.append(DenseParams.init(rng, a, b, act))
        return cls(layers)


# ---------------------------------------------------------------- layers

def dense(x, p: DenseParams) -> Tensor:
    return ACTIVATIONS[p.activation](ad.matmul(x, p.W) + p.b)


def gcn_layer(H, op, p: GcnLayerParams) -> Tensor:
    """One message-passing step ``act(op @ H @ W)`` with ``op`` the normalized adjacency."""
    H = ad.as_tensor(H)
    n = op.shape[0]
    if H.ndim < 2 or H.shape[-2] != n:
        raise ShapeMismatch(f"gcn_layer: features {H.shape} do not match operator {op.shape}")
    return ACTIVATIONS[p.activation](ad.matmul(op, ad.matmul(H, p.W)))


def conv1d_encoder(series, p: ConvEncoderParams) -> Tensor:
    """``(..., N, W, C)`` waveforms to ``(..., N, F)`` node features."""
    series = ad.as_tensor(series)
    if series.ndim < 3:
        raise ShapeMismatch(f"conv1d_encoder expects (..., N, W, C), got {series.shape}")
    lead, (w, c) = series.shape[:-2], series.shape[-2:]
    if w < p.receptive_field:
        raise SeriesTooShort(f"series of {w} samples is shorter than the receptive field {p.receptive_field}")
    x = ad.reshape(series, (-1, w, c))
    for kernel, bias in zip(p.kernels, p.biases):
        x = ad.relu(ad.conv1d(x, kernel, bias))
    pooled = ad.mean(x, axis=1)
    return ad.reshape(pooled, lead + (p.out_features,))


def gru_cell(x, h, p: GruEncoderParams) -> Tensor:
    z = ad.sigmoid(ad.matmul(x, p.Wz) + ad.matmul(h, p.Uz) + p.bz)
    r = ad.sigmoid(ad.matmul(x, p.Wr) + ad.matmul(h, p.Ur) + p.br)
    n = ad.tanh(ad.matmul(x, p.Wn) + ad.matmul(r * h, p.Un) + p.bn)
    return z * h + (1.0 - z) * n


def gru_encoder(series, p: GruEncoderParams) -> Tensor:
    """``(B, T_in, N, K)`` sequences to the final hidden state ``(B, N, H)``."""
    series = ad.as_tensor(series)
    if series.ndim != 4 or series.shape[-1] != p.proj.W.shape[0]:
        raise ShapeMismatch(f"gru_encoder expects (B, T_in, N, {p.proj.W.shape[0]}), got {series.shape}")
    b, t_in, n, _ = series.shape
    h = ad.Tensor(np.zeros((b, n, p.hidden)))
    for t in range(t_in):
        x = dense(series[:, t], p.proj)
        h = gru_cell(x, h, p)
    return h


def mlp(x, p: MlpParams) -> Tensor:
    for layer in p.layers:
        x = dense(x, layer)
    return x


def _check_members(Z):
    if len(Z) == 0:
        raise EmptyEnsemble("aggregation needs at least one member")
    shapes = {z.shape for z in Z}
    if len(shapes) != 1:
        raise ShapeMismatch(f"ensemble members have different shapes: {sorted(shapes)}")


def attention_aggregate(H: Sequence[Tensor], Z: Sequence[Tensor] | None = None,
                        p: AttentionParams | None = None):
    """Softmax-weighted fusion across ensemble members.

    Scores ``S_i = H_i @ W_att`` are normalized across members separately at
    every position, and the fused output is ``sum_i alpha_i * Z_i``. ``Z``
    defaults to ``H``. Returns ``(fused, alpha)`` with ``alpha`` stacked on a
    leading member axis.

    A single member needs no scores (its weight is identically 1), so ``p``
    may be ``None`` in that case.
    """
    Z = list(H) if Z is None else list(Z)
    _check_members(Z)
    if len(H) != len(Z):
        raise ShapeMismatch(f"{len(H)} score inputs for {len(Z)} members")
    if len(Z) == 1 and p is None:
        return Z[0], Tensor(np.ones((1,) + Z[0].shape))
    if p is None:
        raise ValueError("attention over several members needs AttentionParams")
    scores = ad.stack([ad.matmul(h, p.W_att) for h in H], axis=0)
    alpha = ad.softmax(scores, axis=0)
    fused = ad.sum(alpha * ad.stack(Z, axis=0), axis=0)
    return fused, alpha


def mean_aggregate(Z: Sequence[Tensor]) -> Tensor:
    _check_members(Z)
    return ad.mean(ad.stack(Z, axis=0), axis=0)


def max_aggregate(Z: Sequence[Tensor]) -> Tensor:
    _check_members(Z)
    return ad.max_over_set(Z)
