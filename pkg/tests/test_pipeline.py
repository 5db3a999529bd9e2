import json
import math
from dataclasses import replace

import numpy as np
import pytest

from topo_ensemble import autodiff as ad
from topo_ensemble.autodiff import Tensor, finite_difference_check
from topo_ensemble.data import DataError, DatasetBundle, SyntheticSpec, TooFewEvents, generate_synthetic
from topo_ensemble.geodesy import GeoCoordinate
from topo_ensemble.graphgen import GraphFamily, SensorGraph, select_family
from topo_ensemble.persistence import compute_diagram
from topo_ensemble.pipeline import (Divergence, ModelConfig, TrainConfig, WindowTooShort, WrongAggregator,
                                    attention_report, build_model, cross_validate, evaluate, load_checkpoint,
                                    loss_tser, loss_traffic, task_loss, regression_metrics, save_checkpoint, train,
                                    window_reduction, write_attention_report, write_history_csv)

TINY_TSER = dict(task="tser", conv_channels=(3, 4), kernel_size=3, gcn_hidden=4, gcn_out=4, head_hidden=3)
TINY_TRAFFIC = dict(task="traffic", in_channels=1, gru_hidden=4, gru_proj=3, gcn_hidden=4, gcn_out=4,
                    head_hidden=4, t_out=3)


@pytest.fixture(scope="module")
def tser_data():
    return generate_synthetic(SyntheticSpec(n_sensors=5, n_events=12, sample_rate=4, window_seconds=5, seed=1))


@pytest.fixture(scope="module")
def tser_graphs(tser_data):
    D = tser_data.distance_matrix()
    return select_family(D, compute_diagram(D), "g0")


@pytest.fixture(scope="module")
def traffic_data():
    return generate_synthetic(SyntheticSpec(task="traffic", n_sensors=4, n_steps=120, t_in=6, t_out=3, seed=2))


# ---------------------------------------------------------------- losses

def test_loss_tser_examples():
    assert float(loss_tser(np.zeros((4, 5)), np.zeros((4, 5))).data) == 0.0
    assert float(loss_tser(np.ones((4, 5)), np.zeros((4, 5))).data) == 5.0
    w = Tensor(np.array([2.0]))
    assert math.isclose(float(loss_tser(np.zeros((4, 5)), np.zeros((4, 5)), [w], 1e-4).data), 4e-4, rel_tol=1e-12)


def test_loss_traffic_examples():
    pred = np.array([[[1.0], [-1.0]]])  # T_out=1, N=2, K=1
    assert float(loss_traffic(pred, np.zeros_like(pred)).data) == 1.0
    assert float(loss_traffic(pred, pred).data) == 0.0
    rng = np.random.default_rng(0)
    p, y = rng.normal(size=(2, 3, 4, 1)), rng.normal(size=(2, 3, 4, 1))
    base = float(loss_traffic(p, y).data)
    assert math.isclose(float(loss_traffic(y + (p - y) * -2.5, y).data), 2.5 * base, rel_tol=1e-12)


# ---------------------------------------------------------------- metrics

def test_metric_examples():
    assert regression_metrics([110], [100])["mape"] == pytest.approx(10.0)
    m = regression_metrics([1, 3], [2, 2])
    assert (m["mae"], m["mse"], m["rmse"]) == (1.0, 1.0, 1.0)
    m = regression_metrics([5, 5], [5, 5])
    assert (m["mae"], m["mse"], m["rmse"]) == (0.0, 0.0, 0.0)
    m = regression_metrics([1, 2], [0, 2])
    assert m["mape_skipped"] == 1 and m["mape"] == 0.0


# ---------------------------------------------------------------- shapes

def test_tser_shapes_at_full_scale():
    rng = np.random.default_rng(0)
    coords = [GeoCoordinate(42 + 0.01 * i, 13 + 0.013 * (i % 7)) for i in range(39)]
    graph = SensorGraph(39, [(i, i + 1, 0.5) for i in range(38)])
    model = build_model(ModelConfig(task="tser"), [graph], seed=0)
    out = model(rng.normal(size=(1, 39, 1000, 3)))
    assert out.shape == (1, 39, 5) and len(coords) == 39


def test_traffic_horizons(traffic_data):
    cfg = ModelConfig(**{**TINY_TRAFFIC, "t_out": 12})
    data = generate_synthetic(SyntheticSpec(task="traffic", n_sensors=4, n_steps=200, seed=2))
    model = build_model(cfg, [SensorGraph(4, [(0, 1, 1.0)])], seed=0)
    out = model(data.inputs([0, 1]))
    assert out.shape == (2, 12, 4, 1)
    report = evaluate(model, data)
    assert sorted(report.per_horizon, key=int) == ["3", "6", "12"]


def test_traffic_equivariance_on_edgeless_graph():
    cfg = ModelConfig(**TINY_TRAFFIC)
    model = build_model(cfg, [SensorGraph(5, [])], seed=3)
    enc = model.subnets[0].encoder
    for t in (enc.Uz, enc.Ur, enc.Un):
        t.data[...] = 0.0
    x = np.full((2, 6, 5, 1), 0.7)
    x[:, :, 2] = -0.4
    perm = np.array([3, 0, 4, 2, 1])
    base = model(x).data
    assert np.allclose(model(x[:, :, perm]).data, base[:, :, perm], atol=1e-14)


def test_single_graph_attention_matches_plain_model(tser_data, tser_graphs):
    g = tser_graphs.graphs[:1]
    a = build_model(ModelConfig(**TINY_TSER, aggregator="att"), g, seed=4)
    b = build_model(ModelConfig(**TINY_TSER, aggregator="none"), g, seed=4)
    x = tser_data.inputs([0, 1, 2])
    assert a(x).data.tobytes() == b(x).data.tobytes()


# ---------------------------------------------------------------- gradients of full models

def jitter_biases(model, seed):
    # zero biases put ReLU exactly on its kink wherever the input is silent
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        if p.name and p.name.endswith(".b"):
            p.data += rng.normal(0, 0.1, p.shape)

@pytest.mark.parametrize("agg", ["att", "mean", "max"])
def test_tser_model_gradient(tser_data, tser_graphs, agg):
    model = build_model(ModelConfig(**TINY_TSER, aggregator=agg), tser_graphs.graphs[:3], seed=5)
    jitter_biases(model, 5)
    x, y = tser_data.inputs([0, 1]), tser_data.targets([0, 1])
    f = lambda: task_loss(model, model(x), y, 1e-4)
    assert finite_difference_check(f, model.parameters()) < 1e-4


@pytest.mark.parametrize("agg", ["att", "mean"])
def test_traffic_model_gradient(traffic_data, agg):
    graphs = [SensorGraph(4, [(0, 1, 1.0), (1, 2, 0.5)]), SensorGraph(4, [(0, 3, 0.3)])]
    model = build_model(ModelConfig(**TINY_TRAFFIC, aggregator=agg), graphs, seed=6)
    x, y = traffic_data.inputs([0, 4]), traffic_data.targets([0, 4])
    f = lambda: loss_traffic(model(x), y)
    assert finite_difference_check(f, model.parameters()) < 1e-4


# ---------------------------------------------------------------- training

def quick_cfg(**kw):
    return TrainConfig.for_task("tser", **{"epochs": 3, "batch_size": 4, "learning_rate": 1e-3, **kw})


def test_zero_learning_rate_freezes_parameters(tser_data, tser_graphs):
    model = build_model(ModelConfig(**TINY_TSER), tser_graphs, seed=0)
    before = [p.data.copy() for p in model.parameters()]
    hist = train(model, tser_data, quick_cfg(learning_rate=0.0, optimizer="adam")).history
    assert all(np.array_equal(a, p.data) for a, p in zip(before, model.parameters()))
    assert len({r["val_loss"] for r in hist}) == 1


def test_training_is_deterministic(tser_data, tser_graphs, tmp_path):
    runs = []
    for k in range(2):
        model = build_model(ModelConfig(**TINY_TSER), tser_graphs, seed=7)
        hist = train(model, tser_data, quick_cfg(seed=7)).history
        write_history_csv(hist, tmp_path / f"h{k}.csv")
        runs.append((tmp_path / f"h{k}.csv").read_bytes())
    assert runs[0] == runs[1]


def test_training_reduces_loss(tser_data, tser_graphs):
    model = build_model(ModelConfig(**TINY_TSER), tser_graphs, seed=0)
    hist = train(model, tser_data, quick_cfg(epochs=15, optimizer="adam", learning_rate=3e-3)).history
    assert hist[-1]["train_loss"] < hist[0]["train_loss"]


def test_divergence_reports_epoch(tser_data, tser_graphs):
    model = build_model(ModelConfig(**TINY_TSER), tser_graphs, seed=0)
    bad = replace(tser_data, labels=tser_data.labels.copy())
    bad.labels[bad.splits["train"][0], 0, 0] = np.inf
    with pytest.raises(Divergence) as info:
        train(model, bad, quick_cfg())
    assert info.value.epoch == 1


def test_evaluate_is_pure(tser_data, tser_graphs):
    model = build_model(ModelConfig(**TINY_TSER), tser_graphs, seed=0)
    assert evaluate(model, tser_data).to_json() == evaluate(model, tser_data).to_json()


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)


# ---------------------------------------------------------------- experiments

def test_cross_validation_folds(tser_graphs):
    data = generate_synthetic(SyntheticSpec(n_sensors=5, n_events=40, sample_rate=2, window_seconds=5))
    out = cross_validate(data, ModelConfig(**TINY_TSER), quick_cfg(epochs=1), tser_graphs.graphs[:1])
    assert len(out["folds"]) == 5
    assert set(out["mean"]) == {"mae", "mse", "rmse", "mape"}
    with pytest.raises(ValueError):
        cross_validate(data, ModelConfig(**TINY_TSER), quick_cfg(), tser_graphs, k=1)


def test_cross_validation_too_few_events(tser_data, tser_graphs):
    # 12 events leave 10 for training; 11 folds cannot all be filled
    with pytest.raises(TooFewEvents):
        cross_validate(tser_data, ModelConfig(**TINY_TSER), quick_cfg(), tser_graphs, k=11)


def test_window_guard(tser_data, tser_graphs):
    with pytest.raises(WindowTooShort):
        window_reduction(tser_data, ModelConfig(**TINY_TSER), quick_cfg(), tser_graphs, [0.01])


def test_full_window_equals_standard_evaluation(tser_data, tser_graphs, tmp_path):
    cfg = quick_cfg(epochs=2)
    rows = window_reduction(tser_data, ModelConfig(**TINY_TSER), cfg, tser_graphs.graphs[:2], [5.0],
                            out_csv=tmp_path / "w.csv")
    model = build_model(ModelConfig(**TINY_TSER), tser_graphs.graphs[:2], seed=0)
    train(model, tser_data, cfg)
    assert rows[0]["mae"] == evaluate(model, tser_data).mae
    assert (tmp_path / "w.csv").read_text().startswith("window_s,samples")


def test_attention_report_single_graph(tser_data, tser_graphs):
    model = build_model(ModelConfig(**TINY_TSER), tser_graphs.graphs[:1], seed=0)
    rows = attention_report(model, tser_data)["rows"]
    assert len(rows) == 1 and rows[0]["mean_weight"] == 1.0


def test_attention_report_46_graphs(tser_data, tmp_path):
    graphs = GraphFamily("g01", [SensorGraph(5, [(i % 4, 4, 0.1 + i / 100)], float(i), i % 2) for i in range(46)])
    model = build_model(ModelConfig(**TINY_TSER), graphs, seed=0)
    report = attention_report(model, tser_data)
    assert len(report["rows"]) == 46
    assert abs(sum(r["mean_weight"] for r in report["rows"]) - 1.0) < 1e-6
    w = [r["mean_weight"] for r in report["rows"]]
    assert w == sorted(w, reverse=True)
    write_attention_report(report, tmp_path / "att")
    assert len((tmp_path / "att.csv").read_text().splitlines()) == 47
    assert len(json.loads((tmp_path / "att.json").read_text())["per_node"]) == 46


def test_attention_report_needs_attention(tser_data, tser_graphs):
    model = build_model(ModelConfig(**TINY_TSER, aggregator="mean"), tser_graphs, seed=0)
    with pytest.raises(WrongAggregator):
        attention_report(model, tser_data)


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tser_data, tser_graphs, tmp_path):
    model = build_model(ModelConfig(**TINY_TSER), tser_graphs, seed=2)
    train(model, tser_data, quick_cfg(epochs=1))
    save_checkpoint(model, tmp_path / "m.ckpt", quick_cfg())
    back, cfg = load_checkpoint(tmp_path / "m.ckpt")
    assert cfg == quick_cfg()
    x = tser_data.inputs([0, 1])
    assert back(x).data.tobytes() == model(x).data.tobytes()


def test_checkpoint_truncated(tser_graphs, tmp_path):
    model = build_model(ModelConfig(**TINY_TSER), tser_graphs, seed=2)
    save_checkpoint(model, tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "m.ckpt").write_bytes(raw[:-16])
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "m.ckpt")
