"""Persistent-homology graph ensembles for sensor-network forecasting."""
from .geodesy import GeoCoordinate, NonConvergence, build_distance_matrix, vincenty_distance
from .persistence import (FiltrationBudget, PersistenceDiagram, PersistencePair, betti_at, brute_force_diagram,
                          compute_diagram, compute_h0, compute_h1)
from .graphgen import (GraphFamily, SensorGraph, generate_ph_graphs, normalize_edge_weights, propagation_operator,
                       threshold_graph)
from .data import DatasetBundle, SyntheticSpec, generate_synthetic
from .pipeline import (EnsembleModel, ModelConfig, TrainConfig, attention_report, build_model, cross_validate,
                       evaluate, forward_tser, forward_traffic, loss_tser, loss_traffic, train, window_reduction)

__version__ = "0.1.0"
