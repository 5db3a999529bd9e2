"""Command line front end chaining the pipeline stages.

    topo-ensemble synth   --task tser --out data/
    topo-ensemble ph      --sensors data/sensors.csv --out pd.csv
    topo-ensemble graphs  --diagram pd.csv --sensors data/sensors.csv --family g0 --out graphs/
    topo-ensemble train   --data data/ --graphs graphs/ --out run/
    topo-ensemble eval    --checkpoint run/model.ckpt --data data/ --out run/metrics.json
    topo-ensemble explain --checkpoint run/model.ckpt --data data/ --out run/attention
    topo-ensemble window  --data data/ --family g0 --windows 4,6,8,10 --out window.csv

Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .autodiff import ShapeMismatch
from .data import (DataError, DatasetBundle, SyntheticSpec, TooFewEvents, atomic_write_text, generate_synthetic,
                   read_container, read_matrix_csv, read_sensors_csv, write_container, write_matrix_csv)
from .geodesy import NonConvergence, build_distance_matrix
from .graphgen import FAMILIES, DegenerateScale, EmptyDiagram, read_family, select_family, write_family
from .neural import SeriesTooShort
from .persistence import compute_diagram, read_diagram_csv, write_diagram_csv
from .pipeline import (Divergence, ModelConfig, TrainConfig, WindowTooShort, WrongAggregator, attention_report,
                       build_model, evaluate, load_checkpoint, save_checkpoint, train, window_reduction,
                       write_attention_report, write_history_csv)

log = logging.getLogger("topo_ensemble")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- shared loaders

def _distances(args) -> np.ndarray:
    if getattr(args, "distances", None):
        path = Path(args.distances)
        if path.suffix in (".json", ".bin"):
            return read_container(path.with_suffix(""))[0]
        return read_matrix_csv(path)
    if getattr(args, "sensors", None):
        _, coords = read_sensors_csv(args.sensors)
        return build_distance_matrix(coords, fallback=getattr(args, "haversine_fallback", False))
    raise UsageError("one of --sensors or --distances is required")


def _family_for(args, data: DatasetBundle):
    if args.graphs:
        try:
            return read_family(args.graphs)
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise DataError(f"{args.graphs}: cannot read graph family ({exc})") from exc
    D = data.distance_matrix()
    return select_family(D, compute_diagram(D), args.family, args.tau, args.threshold_direction)


def _model_config(args, data: DatasetBundle) -> ModelConfig:
    aggregator = args.aggregator
    return ModelConfig(task=data.task, in_channels=data.series.shape[-1], aggregator=aggregator,
                       conv_channels=tuple(args.conv_channels), kernel_size=args.kernel_size,
                       gcn_hidden=args.hidden, gcn_out=args.hidden, head_hidden=args.hidden,
                       n_targets=data.labels.shape[-1] if data.labels is not None else 5, t_out=data.t_out)


def _train_config(args, task: str) -> TrainConfig:
    overrides = {"epochs": args.epochs, "seed": args.seed, "aggregator": args.aggregator, "family": args.family}
    for flag, key in (("batch", "batch_size"), ("lr", "learning_rate"), ("lam", "l2_lambda"),
                      ("optimizer", "optimizer")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    return TrainConfig.for_task(task, **overrides)


def _load_data(args) -> DatasetBundle:
    data = DatasetBundle.load(args.data)
    if args.task and args.task != data.task:
        raise UsageError(f"--task {args.task} does not match the {data.task} dataset in {args.data}")
    return data


# ---------------------------------------------------------------- subcommands

def cmd_synth(args):
    spec = SyntheticSpec(task=args.task or "tser", n_sensors=args.n_sensors, geometry=args.geometry,
                         noise_std=args.noise, seed=args.seed, n_events=args.events, sample_rate=args.sample_rate,
                         window_seconds=args.window, n_steps=args.steps)
    bundle = generate_synthetic(spec, args.out)
    D = bundle.distance_matrix()
    write_matrix_csv(Path(args.out) / "distances.csv", D)
    write_container(Path(args.out) / "distances", D, "distances")
    log.info("wrote %s dataset with %d sensors to %s", bundle.task, bundle.n_sensors, args.out)


def cmd_ph(args):
    D = _distances(args)
    diagram = compute_diagram(D)
    write_diagram_csv(diagram, args.out)
    if args.distances_out:
        write_matrix_csv(args.distances_out, D)
    log.info("%d points: %d H0 and %d H1 pairs -> %s", diagram.n_points, len(diagram.in_dim(0)),
             len(diagram.in_dim(1)), args.out)


def cmd_graphs(args):
    D = _distances(args)
    if args.family == "baseline":
        diagram = None
    elif args.diagram:
        diagram = read_diagram_csv(args.diagram, n_points=D.shape[0])
    else:
        diagram = compute_diagram(D)
    family = select_family(D, diagram, args.family, args.tau, args.threshold_direction, binary=args.binary)
    write_family(family, args.out)
    log.info("%s: %d graphs -> %s", family.family, len(family), args.out)


def cmd_train(args):
    data = _load_data(args)
    graphs = _family_for(args, data)
    if len(graphs) == 0:
        raise DataError(f"graph family {graphs.family!r} is empty for this sensor layout")
    model_cfg = _model_config(args, data)
    cfg = _train_config(args, data.task)
    model = build_model(model_cfg, graphs, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(model, data, cfg, log=lambda r: log.info("epoch %(epoch)d train %(train_loss).6g "
                                                             "val %(val_loss).6g", r))
    write_history_csv(result.history, out / "history.csv")
    save_checkpoint(model, out / "model.ckpt", cfg)
    log.info("trained %d sub-networks; outputs in %s", model.size, out)


def cmd_eval(args):
    data = _load_data(args)
    model, _ = load_checkpoint(args.checkpoint)
    report = evaluate(model, data, args.split)
    text = report.to_json()
    if args.out:
        atomic_write_text(args.out, text + "\n")
    print(text)


def cmd_explain(args):
    data = _load_data(args)
    model, _ = load_checkpoint(args.checkpoint)
    report = attention_report(model, data, args.split)
    write_attention_report(report, args.out)
    for row in report["rows"][:3]:
        print(f"graph {row['graph']}  eps={row['epsilon']}  dim={row['source_dim']}  weight={row['mean_weight']:.5f}")


def cmd_window(args):
    data = _load_data(args)
    graphs = _family_for(args, data)
    try:
        windows = [float(w) for w in args.windows.split(",")]
    except ValueError as exc:
        raise UsageError(f"--windows: {exc}") from exc
    seeds = [args.seed + s for s in range(args.n_seeds)]
    rows = window_reduction(data, _model_config(args, data), _train_config(args, data.task), graphs, windows,
                            seeds, out_csv=args.out)
    for r in rows:
        print(f"{r['window_s']:6.2f} s  mae={r['mae']:.5f}  rmse={r['rmse']:.5f}")


# ---------------------------------------------------------------- parser

def _add_graph_flags(p, need_family=True):
    p.add_argument("--family", choices=FAMILIES, default="g0" if not need_family else None,
                   required=need_family, help="graph family to generate")
    p.add_argument("--tau", type=float, default=0.5, help="baseline weight threshold")
    p.add_argument("--threshold-direction", choices=("gt", "lt"), default="gt",
                   help="keep pairs with weight above (gt) or below (lt) tau")


def _add_train_flags(p):
    p.add_argument("--data", required=True, help="dataset directory written by `synth` or DatasetBundle.save")
    p.add_argument("--graphs", help="graph family directory written by `graphs` (default: derive from --family)")
    p.add_argument("--task", choices=("tser", "traffic"))
    p.add_argument("--aggregator", choices=("att", "mean", "max"), default="att")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda", dest="lam", type=float, help="L2 strength")
    p.add_argument("--optimizer", choices=("rmsprop", "adam"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=32, help="GCN and head width")
    p.add_argument("--conv-channels", type=lambda s: [int(c) for c in s.split(",")], default=[32, 64])
    p.add_argument("--kernel-size", type=int, default=9)
    _add_graph_flags(p, need_family=False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="topo-ensemble", description="Persistent-homology graph ensembles for sensor networks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--task", choices=("tser", "traffic"), default="tser")
    p.add_argument("--geometry", choices=("cluster", "ring", "grid"), default="cluster")
    p.add_argument("--n-sensors", type=int, default=12)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--events", type=int, default=40)
    p.add_argument("--sample-rate", type=float, default=20.0)
    p.add_argument("--window", type=float, default=10.0, help="TSER window length in seconds")
    p.add_argument("--steps", type=int, default=2000, help="traffic series length")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ph", parents=[common], help="persistence diagram of a sensor layout")
    p.add_argument("--sensors")
    p.add_argument("--distances")
    p.add_argument("--haversine-fallback", action="store_true")
    p.add_argument("--distances-out", help="also write the distance matrix as CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ph)

    p = sub.add_parser("graphs", parents=[common], help="generate a graph family")
    p.add_argument("--sensors")
    p.add_argument("--distances")
    p.add_argument("--haversine-fallback", action="store_true")
    p.add_argument("--diagram", help="diagram CSV written by `ph` (computed when omitted)")
    p.add_argument("--binary", action="store_true", help="unit edge weights")
    _add_graph_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graphs)

    p = sub.add_parser("train", parents=[common], help="train an ensemble model")
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="run directory (history.csv, model.ckpt)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="metrics of a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task", choices=("tser", "traffic"))
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", help="metrics JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", parents=[common], help="per-graph attention weights")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task", choices=("tser", "traffic"))
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", required=True, help="output stem; writes .csv and .json")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("window", parents=[common], help="window-reduction experiment")
    _add_train_flags(p)
    p.add_argument("--windows", default="4,6,8,10", help="comma-separated window lengths in seconds")
    p.add_argument("--n-seeds", type=int, default=3)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_window)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (UsageError, WrongAggregator, WindowTooShort) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonConvergence, Divergence, DegenerateScale) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, EmptyDiagram, TooFewEvents, ShapeMismatch, SeriesTooShort, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
