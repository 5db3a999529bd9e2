"""Ensemble models for the two tasks, their losses, training and evaluation.

A model holds one sub-network per graph of a family. Each sub-network runs
its own temporal encoder and a two-layer GCN over its graph; the node
representations are fused across sub-networks (attention, mean or max) and
passed to shared output heads.

TSER (seismic intensity regression): waveforms ``(B, N, W, C)`` ->
Conv1D encoder -> GCN(ReLU) -> GCN(Tanh) -> fuse -> five single-output MLPs
-> ``(B, N, 5)``.

Traffic forecasting: speeds ``(B, T_in, N, K)`` -> projection + GRU ->
GCN(ReLU) -> GCN(identity) -> fuse -> MLP -> ``(B, T_out, N, K)``.
"""
from __future__ import annotations

import csv
import json
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor
from .data import (DataError, DatasetBundle, TooFewEvents, atomic_write_bytes, atomic_write_text,
                   tser_splits)
from .graphgen import GraphFamily, SensorGraph, propagation_operator
from .neural import (AttentionParams, ConvEncoderParams, GcnLayerParams, GruEncoderParams, MlpParams,
                     attention_aggregate, conv1d_encoder, gcn_layer, gru_encoder,
                     max_aggregate, mean_aggregate, mlp)

CHECKPOINT_VERSION = 1
HORIZONS = (3, 6, 12)


class Divergence(ArithmeticError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at epoch {epoch}")
        self.epoch = epoch


class WrongAggregator(ValueError):
    pass


class WindowTooShort(ValueError):
    pass


def worker_count() -> int:
    """Parallelism cap from ``TOPO_ENSEMBLE_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("TOPO_ENSEMBLE_THREADS", "1")))
    except ValueError:
        return 1


def _ordered_map(fn, items):
    """``map`` over a thread pool; results come back in input order."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- configuration

@dataclass
class ModelConfig:
    task: str = "tser"
    in_channels: int = 3
    aggregator: str = "att"          # att | mean | max | none (single graph, no fusion)
    attention_scores: str = "vector"  # vector: F x F scores, scalar: one score per node
    conv_channels: tuple = (32, 64)
    kernel_size: int = 9
    gru_hidden: int = 64
    gru_proj: int = 16
    gcn_hidden: int = 32
    gcn_out: int = 32
    head_hidden: int = 32
    n_targets: int = 5
    t_out: int = 12

    def __post_init__(self):
        if self.task not in ("tser", "traffic"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.aggregator not in ("att", "mean", "max", "none"):
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        if self.attention_scores not in ("vector", "scalar"):
            raise ValueError(f"unknown attention score mode {self.attention_scores!r}")
        self.conv_channels = tuple(self.conv_channels)


@dataclass
class TrainConfig:
    task: str = "tser"
    epochs: int = 100
    batch_size: int = 20
    optimizer: str = "rmsprop"
    learning_rate: float = 1e-4
    l2_lambda: float = 1e-4
    seed: int = 0
    aggregator: str = "att"
    family: str = "g0"
    shuffle: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer not in ("rmsprop", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def for_task(cls, task: str, **overrides) -> "TrainConfig":
        """Defaults used for the two tasks: RMSProp/batch 20/MSE+L2 vs Adam/batch 64/L1."""
        base = dict(task=task, optimizer="rmsprop", batch_size=20, l2_lambda=1e-4)
        if task == "traffic":
            base.update(optimizer="adam", batch_size=64, l2_lambda=0.0)
        base.update(overrides)
        return cls(**base)


# ---------------------------------------------------------------- model

@dataclass
class Subnet:
    encoder: ConvEncoderParams | GruEncoderParams
    gcn1: GcnLayerParams
    gcn2: GcnLayerParams
    operator: np.ndarray
    graph: SensorGraph | None = None

    def parameters(self):
        return self.encoder.parameters() + self.gcn1.parameters() + self.gcn2.parameters()


@dataclass
class EnsembleModel:
    config: ModelConfig
    subnets: list[Subnet]
    attention: AttentionParams | None
    heads: list[MlpParams]
    family: str = ""
    seed: int = 0

    def parameters(self) -> list[Tensor]:
        params = [p for s in self.subnets for p in s.parameters()]
        if self.attention is not None:
            params += self.attention.parameters()
        return params + [p for h in self.heads for p in h.parameters()]

    @property
    def size(self) -> int:
        return len(self.subnets)

    def fuse(self, H: list[Tensor]):
        """Aggregate sub-network outputs; returns ``(fused, alpha or None)``."""
        agg = self.config.aggregator
        if agg == "att":
            return attention_aggregate(H, H, self.attention)
        if agg == "mean":
            return mean_aggregate(H), None
        if agg == "max":
            return max_aggregate(H), None
        return H[0], None

    def __call__(self, batch, return_attention: bool = False):
        out = forward_tser(self, batch, return_attention) if self.config.task == "tser" else \
            forward_traffic(self, batch, return_attention)
        return out


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


def build_model(config: ModelConfig, graphs: GraphFamily | Sequence[SensorGraph], seed: int = 0) -> EnsembleModel:
    """Initialize one sub-network per graph.

    Each component draws from its own seeded stream (sub-network ``i``,
    attention, head ``k``), so the initial weights of a component do not
    depend on how many other components the model has.
    """
    graphs = list(graphs)
    family = graphs.family if isinstance(graphs, GraphFamily) else ""
    if not graphs:
        raise ValueError("a model needs at least one graph")
    if config.aggregator == "none" and len(graphs) != 1:
        raise ValueError("aggregator 'none' is only defined for a single graph")
    subnets = []
    for i, g in enumerate(graphs):
        rng = _rng(seed, 1, i)
        if config.task == "tser":
            enc = ConvEncoderParams.init(rng, config.in_channels, config.conv_channels, config.kernel_size)
            last = "tanh"
        else:
            enc = GruEncoderParams.init(rng, config.in_channels, config.gru_hidden, config.gru_proj)
            last = "identity"
        gcn1 = GcnLayerParams.init(rng, enc.out_features, config.gcn_hidden, "relu")
        gcn2 = GcnLayerParams.init(rng, config.gcn_hidden, config.gcn_out, last)
        subnets.append(Subnet(enc, gcn1, gcn2, propagation_operator(g), g))
    attention = None
    if config.aggregator == "att" and len(graphs) > 1:
        attention = AttentionParams.init(_rng(seed, 2), config.gcn_out, config.attention_scores)
    if config.task == "tser":
        heads = [MlpParams.init(_rng(seed, 3, k), [config.gcn_out, config.head_hidden, 1])
                 for k in range(config.n_targets)]
    else:
        heads = [MlpParams.init(_rng(seed, 3, 0), [config.gcn_out, config.head_hidden,
                                                   config.t_out * config.in_channels])]
    return EnsembleModel(config, subnets, attention, heads, family=family, seed=seed)


def _subnet_outputs(model: EnsembleModel, encode: Callable, batch) -> list[Tensor]:
    H = []
    for s in model.subnets:
        x = encode(batch, s.encoder)
        h = gcn_layer(x, s.operator, s.gcn1)
        H.append(gcn_layer(h, s.operator, s.gcn2))
    return H


def forward_tser(model: EnsembleModel, batch, return_attention: bool = False):
    """``(B, N, W, C)`` (or ``(N, W, C)``) waveforms to ``(B, N, 5)`` intensities."""
    if model.config.task != "tser":
        raise ValueError("model was not built for TSER")
    batch = ad.as_tensor(batch)
    n = model.subnets[0].operator.shape[0]
    if batch.ndim not in (3, 4) or batch.shape[-3] != n or batch.shape[-1] != model.config.in_channels:
        raise ShapeMismatch(f"TSER batch must be (B, {n}, W, {model.config.in_channels}), got {batch.shape}")
    H = _subnet_outputs(model, conv1d_encoder, batch)
    fused, alpha = model.fuse(H)
    out = ad.concat([mlp(fused, head) for head in model.heads], axis=-1)
    return (out, alpha) if return_attention else out


def forward_traffic(model: EnsembleModel, batch, return_attention: bool = False):
    """``(B, T_in, N, K)`` history to ``(B, T_out, N, K)`` forecasts."""
    if model.config.task != "traffic":
        raise ValueError("model was not built for traffic forecasting")
    batch = ad.as_tensor(batch)
    n = model.subnets[0].operator.shape[0]
    k = model.config.in_channels
    if batch.ndim != 4 or batch.shape[2] != n or batch.shape[3] != k:
        raise ShapeMismatch(f"traffic batch must be (B, T_in, {n}, {k}), got {batch.shape}")
    H = _subnet_outputs(model, gru_encoder, batch)
    fused, alpha = model.fuse(H)
    y = mlp(fused, model.heads[0])                      # (B, N, T_out * K)
    b = batch.shape[0]
    y = ad.reshape(y, (b, n, model.config.t_out, k))
    out = ad.transpose(y, (0, 2, 1, 3))
    return (out, alpha) if return_attention else out


# ---------------------------------------------------------------- losses

def l2_penalty(params: Sequence[Tensor]) -> Tensor:
    total = None
    for p in params:
        term = ad.sum(ad.square(p))
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def loss_tser(pred, label, params: Sequence[Tensor] = (), lam: float = 1e-4) -> Tensor:
    """Squared error summed over the targets and averaged over sensors (and events), plus ``lam * ||W||^2``."""
    pred, label = ad.as_tensor(pred), ad.as_tensor(label)
    if pred.shape != label.shape:
        raise ShapeMismatch(f"prediction {pred.shape} and label {label.shape} differ")
    n_rows = pred.size // pred.shape[-1]
    data = ad.sum(ad.square(pred - label)) * (1.0 / n_rows)
    if lam and params:
        return data + l2_penalty(params) * lam
    return data


def loss_traffic(pred, label) -> Tensor:
    """Absolute error summed over horizon and channels, averaged over sensors (and batch)."""
    pred, label = ad.as_tensor(pred), ad.as_tensor(label)
    if pred.shape != label.shape:
        raise ShapeMismatch(f"prediction {pred.shape} and label {label.shape} differ")
    if pred.ndim < 3:
        raise ShapeMismatch(f"traffic tensors need (..., T_out, N, K), got {pred.shape}")
    n_rows = pred.size // (pred.shape[-3] * pred.shape[-1])
    return ad.sum(ad.absolute(pred - label)) * (1.0 / n_rows)


def task_loss(model: EnsembleModel, pred, target, lam: float) -> Tensor:
    if model.config.task == "tser":
        return loss_tser(pred, target, model.parameters(), lam)
    loss = loss_traffic(pred, target)
    if lam:
        loss = loss + l2_penalty(model.parameters()) * lam
    return loss


# ---------------------------------------------------------------- optimizers

class RMSProp:
    def __init__(self, params, lr=1e-4, decay=0.9, eps=1e-8):
        self.params, self.lr, self.decay, self.eps = list(params), lr, decay, eps
        self.sq = [np.zeros(p.shape) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.sq):
            if p.grad is None:
                continue
            v *= self.decay
            v += (1.0 - self.decay) * p.grad * p.grad
            p.data -= self.lr * p.grad / (np.sqrt(v) + self.eps)


class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params, self.lr, self.eps = list(params), lr, eps
        self.b1, self.b2 = betas
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, params, lr: float):
    return RMSProp(params, lr) if name == "rmsprop" else Adam(params, lr)


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    model: EnsembleModel
    history: list[dict] = field(default_factory=list)


def predict(model: EnsembleModel, data: DatasetBundle, indices, batch_size: int = 64) -> np.ndarray:
    """Model outputs (in model units) for the given sample indices."""
    indices = np.asarray(indices)
    outs = []
    with ad.no_grad():
        for start in range(0, len(indices), batch_size):
            outs.append(model(data.inputs(indices[start:start + batch_size])).data)
    return np.concatenate(outs) if outs else np.zeros((0,))


def split_loss(model: EnsembleModel, data: DatasetBundle, split: str, lam: float, batch_size: int = 64) -> float:
    idx = np.asarray(data.splits.get(split, []))
    if len(idx) == 0:
        return math.nan
    pred = predict(model, data, idx, batch_size)
    with ad.no_grad():
        return float(task_loss(model, pred, data.targets(idx), lam).data)


def train(model: EnsembleModel, data: DatasetBundle, cfg: TrainConfig, log: Callable | None = None) -> TrainResult:
    """Minibatch training for ``cfg.epochs`` epochs.

    The reported training loss of an epoch is the size-weighted mean of
    its minibatch losses; validation loss is measured after the epoch.
    """
    if cfg.task != model.config.task or data.task != model.config.task:
        raise ValueError(f"task mismatch: config {cfg.task!r}, model {model.config.task!r}, data {data.task!r}")
    params = model.parameters()
    opt = make_optimizer(cfg.optimizer, params, cfg.learning_rate)
    train_idx = np.asarray(data.splits["train"])
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = _rng(cfg.seed, 4, epoch).permutation(train_idx) if cfg.shuffle else train_idx
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            for p in params:
                p.grad = None
            pred = model(data.inputs(idx))
            loss = task_loss(model, pred, data.targets(idx), cfg.l2_lambda)
            value = float(loss.data)
            if not math.isfinite(value):
                raise Divergence(epoch, value)
            ad.backward(loss)
            opt.step()
            total += value * len(idx)
            count += len(idx)
        row = {"epoch": epoch, "train_loss": total / count,
               "val_loss": split_loss(model, data, "val", cfg.l2_lambda)}
        history.append(row)
        if log is not None:
            log(row)
    return TrainResult(model, history)


def write_history_csv(history: list[dict], path) -> None:
    lines = ["epoch,train_loss,val_loss"] + [f"{r['epoch']},{r['train_loss']!r},{r['val_loss']!r}" for r in history]
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------- metrics

def regression_metrics(pred, true) -> dict:
    """MAE, MSE, RMSE and MAPE (%) over all elements; MAPE skips zero targets."""
    pred, true = np.asarray(pred, float).ravel(), np.asarray(true, float).ravel()
    err = pred - true
    mse = float(np.mean(err ** 2))
    nz = true != 0
    skipped = int(np.count_nonzero(~nz))
    mape = float(np.mean(np.abs(err[nz] / true[nz])) * 100.0) if nz.any() else math.nan
    return {"mae": float(np.mean(np.abs(err))), "mse": mse, "rmse": math.sqrt(mse),
            "mape": mape, "mape_skipped": skipped}


@dataclass
class MetricsReport:
    mae: float
    mse: float
    rmse: float
    mape: float = math.nan
    mape_skipped: int = 0
    per_target: dict = field(default_factory=dict)
    per_horizon: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _average(reports: Sequence[dict]) -> dict:
    return {k: float(np.mean([r[k] for r in reports])) for k in ("mae", "mse", "rmse", "mape")}


def evaluate(model: EnsembleModel, data: DatasetBundle, split: str = "test") -> MetricsReport:
    """Metrics in original units.

    TSER: MAE/MSE/RMSE computed per intensity target, then averaged.
    Traffic: metrics at horizons 3, 6 and 12 steps (those within ``T_out``)
    and their average.
    """
    idx = np.asarray(data.splits[split])
    pred = data.to_original_units(predict(model, data, idx))
    true = data.raw_targets(idx)
    if data.task == "tser":
        per = {str(k): regression_metrics(pred[..., k], true[..., k]) for k in range(true.shape[-1])}
        avg = _average(list(per.values()))
        return MetricsReport(avg["mae"], avg["mse"], avg["rmse"], avg["mape"],
                             sum(r["mape_skipped"] for r in per.values()), per_target=per)
    horizons = [h for h in HORIZONS if h <= data.t_out] or [data.t_out]
    per = {str(h): regression_metrics(pred[:, h - 1], true[:, h - 1]) for h in horizons}
    avg = _average(list(per.values()))
    return MetricsReport(avg["mae"], avg["mse"], avg["rmse"], avg["mape"],
                         sum(r["mape_skipped"] for r in per.values()), per_horizon=per)


# ---------------------------------------------------------------- experiments

def cross_validate(data: DatasetBundle, model_cfg: ModelConfig, cfg: TrainConfig, graphs, k: int = 5,
                   test_fraction: float = 0.2) -> dict:
    """k-fold runs over the training portion, each scored on the same held-out test events.

    Fold ``f`` is validated on the ``f``-th slice of the training events
    and trained with seed ``cfg.seed + f``. Returns per-fold test reports and
    their mean.
    """
    if data.task != "tser":
        raise ValueError("cross-validation is defined for the TSER task")
    if k < 2:
        raise ValueError(f"cross-validation needs k >= 2, got {k}")
    n = data.n_samples
    n_test = int(round(test_fraction * n))
    if n - n_test < k:
        raise TooFewEvents(f"{n - n_test} training events cannot fill {k} folds")
    graphs = list(graphs)

    def run(fold):
        splits = tser_splits(n, cfg.seed, k=k, fold=fold, test_fraction=test_fraction)
        fold_data = data.with_splits(**splits)
        seed = cfg.seed + fold
        model = build_model(model_cfg, graphs, seed)
        train(model, fold_data, TrainConfig(**{**asdict(cfg), "seed": seed}))
        return evaluate(model, fold_data, "test")

    reports = _ordered_map(run, range(k))
    mean = _average([r.to_dict() for r in reports])
    return {"folds": [r.to_dict() for r in reports], "mean": mean}


def window_reduction(data: DatasetBundle, model_cfg: ModelConfig, cfg: TrainConfig, graphs,
                     windows: Sequence[float], seeds: Sequence[int] = (0,), out_csv=None) -> list[dict]:
    """Retrain and test on waveforms cut to each window length (seconds)."""
    if data.task != "tser":
        raise ValueError("window reduction applies to the TSER task")
    graphs = list(graphs)
    receptive = 1 + len(model_cfg.conv_channels) * (model_cfg.kernel_size - 1)
    jobs = []
    for w in windows:
        n_samples = int(round(w * data.sample_rate))
        if n_samples < receptive:
            raise WindowTooShort(f"window of {w} s has {n_samples} samples; the encoder needs {receptive}")
        if n_samples > data.series.shape[2]:
            raise WindowTooShort(f"window of {w} s exceeds the recorded {data.window_seconds} s")
        jobs.extend((w, n_samples, s) for s in seeds)

    def run(job):
        w, n_samples, seed = job
        cut = data.truncated(n_samples)
        model = build_model(model_cfg, graphs, seed)
        train(model, cut, TrainConfig(**{**asdict(cfg), "seed": seed}))
        return evaluate(model, cut, "test")

    reports = _ordered_map(run, jobs)
    rows = []
    for w in windows:
        mine = [r for (jw, _, _), r in zip(jobs, reports) if jw == w]
        row = {"window_s": float(w), "samples": int(round(w * data.sample_rate)), "n_seeds": len(mine)}
        row.update(_average([r.to_dict() for r in mine]))
        rows.append(row)
    if out_csv is not None:
        keys = ["window_s", "samples", "n_seeds", "mae", "mse", "rmse"]
        lines = [",".join(keys)] + [",".join(repr(r[k]) for k in keys) for r in rows]
        atomic_write_text(out_csv, "\n".join(lines) + "\n")
    return rows


def attention_report(model: EnsembleModel, data: DatasetBundle, split: str = "test", batch_size: int = 64) -> dict:
    """Mean attention weight of every graph, globally and per node, sorted by weight."""
    if model.config.aggregator != "att":
        raise WrongAggregator(f"attention report needs the 'att' aggregator, model uses {model.config.aggregator!r}")
    idx = np.asarray(data.splits[split])
    m, n = model.size, data.n_sensors
    total = np.zeros(m)
    per_node = np.zeros((m, n))
    count = 0
    with ad.no_grad():
        for start in range(0, len(idx), batch_size):
            _, alpha = model(data.inputs(idx[start:start + batch_size]), return_attention=True)
            a = np.broadcast_to(alpha.data, alpha.shape[:-1] + (model.config.gcn_out,))  # (M, B, N, F)
            total += a.sum(axis=(1, 2, 3))
            per_node += a.sum(axis=(1, 3))
            count += a.shape[1]
    denom = count * n * model.config.gcn_out
    mean_w = total / denom
    node_w = per_node / (count * model.config.gcn_out)
    rows = []
    for i, s in enumerate(model.subnets):
        g = s.graph
        rows.append({"graph": i, "family": model.family, "source_dim": g.source_dim if g else None,
                     "epsilon": g.epsilon if g else None, "mean_weight": float(mean_w[i])})
    rows.sort(key=lambda r: (-r["mean_weight"], r["graph"]))
    return {"rows": rows, "per_node": node_w.tolist()}


def write_attention_report(report: dict, stem) -> None:
    stem = Path(stem)
    keys = ["graph", "family", "source_dim", "epsilon", "mean_weight"]
    lines = [",".join(keys)] + [",".join("" if r[k] is None else str(r[k]) for k in keys) for r in report["rows"]]
    atomic_write_text(stem.with_suffix(".csv"), "\n".join(lines) + "\n")
    atomic_write_text(stem.with_suffix(".json"), json.dumps(report, indent=2))


# ---------------------------------------------------------------- checkpoints

def _graph_to_dict(g: SensorGraph) -> dict:
    return {"n": g.n, "epsilon": g.epsilon, "source_dim": g.source_dim, "edges": [list(e) for e in g.edges]}


def _param_names(model: EnsembleModel) -> list[str]:
    names = []
    for i, s in enumerate(model.subnets):
        names += [f"subnet{i}.{p.name or 'param'}.{j}" for j, p in enumerate(s.parameters())]
    if model.attention is not None:
        names.append("attention.W_att")
    for k, h in enumerate(model.heads):
        names += [f"head{k}.{p.name or 'param'}.{j}" for j, p in enumerate(h.parameters())]
    return names


def save_checkpoint(model: EnsembleModel, path, train_cfg: TrainConfig | None = None) -> None:
    """Single file: ``u64`` header length, JSON header, little-endian float64 parameter blob."""
    params = model.parameters()
    manifest, offset = [], 0
    for name, p in zip(_param_names(model), params):
        manifest.append({"name": name, "shape": list(p.shape), "offset": offset})
        offset += p.size
    header = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": asdict(model.config),
        "train_config": asdict(train_cfg) if train_cfg else None,
        "seed": model.seed,
        "family": model.family,
        "graphs": [_graph_to_dict(s.graph) for s in model.subnets],
        "parameters": manifest,
        "n_values": offset,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(p.data, dtype="<f8").tobytes() for p in params)
    atomic_write_bytes(path, struct.pack("<Q", len(head)) + head + blob)


def load_checkpoint(path) -> tuple[EnsembleModel, TrainConfig | None]:
    raw = Path(path).read_bytes()
    try:
        (n_head,) = struct.unpack("<Q", raw[:8])
        header = json.loads(raw[8:8 + n_head].decode("utf-8"))
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: not a checkpoint ({exc})") from exc
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    blob = np.frombuffer(raw[8 + n_head:], dtype="<f8")
    if blob.size != header["n_values"]:
        raise DataError(f"{path}: parameter blob holds {blob.size} values, header declares {header['n_values']}")
    graphs = GraphFamily(header["family"], [
        SensorGraph(g["n"], [(int(i), int(j), float(w)) for i, j, w in g["edges"]], g["epsilon"], g["source_dim"])
        for g in header["graphs"]])
    model = build_model(ModelConfig(**header["model_config"]), graphs, header["seed"])
    params = model.parameters()
    if len(params) != len(header["parameters"]):
        raise DataError(f"{path}: parameter manifest does not match the model structure")
    for p, entry in zip(params, header["parameters"]):
        if list(p.shape) != entry["shape"]:
            raise DataError(f"{path}: {entry['name']} has shape {entry['shape']}, model expects {list(p.shape)}")
        p.data[...] = blob[entry["offset"]:entry["offset"] + p.size].reshape(p.shape)
    tc = header.get("train_config")
    return model, (TrainConfig(**tc) if tc else None)
