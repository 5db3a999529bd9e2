"""Sensor graphs from distance matrices.

Two constructions are provided. The baseline graph keeps pairs whose
min-max normalized proximity weight passes a threshold. The persistence
graphs are the 1-skeletons of the Rips complex at every finite death time
of the diagram, grouped by the dimension of the dying feature.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .geodesy import validate_distance_matrix
from .persistence import PersistenceDiagram

FAMILIES = ("g0", "g1", "g01", "baseline")


class DegenerateScale(ValueError):
    pass


class EmptyDiagram(ValueError):
    pass


@dataclass
class SensorGraph:
    n: int
    edges: list[tuple[int, int, float]]
    epsilon: float | None = None
    source_dim: int | Literal["baseline"] = "baseline"

    def __post_init__(self):
        for i, j, w in self.edges:
            if not 0 <= i < j < self.n:
                raise ValueError(f"edge ({i}, {j}) must satisfy 0 <= i < j < n={self.n}")
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"edge weight {w} outside [0, 1]")

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def edge_set(self) -> set[tuple[int, int]]:
        return {(i, j) for i, j, _ in self.edges}

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        for i, j, w in self.edges:
            A[i, j] = A[j, i] = w
        return A


@dataclass
class GraphFamily:
    family: str
    graphs: list[SensorGraph] = field(default_factory=list)

    def __len__(self):
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    def __getitem__(self, idx):
        return self.graphs[idx]

    @property
    def epsilons(self) -> list[float | None]:
        return [g.epsilon for g in self.graphs]


def normalize_edge_weights(D) -> np.ndarray:
    """Proximity weights ``1 - (m - m_min) / (m_max - m_min)`` over off-diagonal entries.

    The closest pair gets weight 1, the farthest 0. The diagonal is 0.
    """
    D = validate_distance_matrix(D)
    n = D.shape[0]
    if n < 2:
        raise ValueError("need at least two sensors")
    off = ~np.eye(n, dtype=bool)
    m_min, m_max = D[off].min(), D[off].max()
    if m_max <= m_min:
        raise DegenerateScale("all pairwise distances are equal; min-max normalization is undefined")
    W = 1.0 - (D - m_min) / (m_max - m_min)
    W[~off] = 0.0
    return np.clip(W, 0.0, 1.0)


def threshold_graph(weights, tau: float, direction: str = "gt") -> SensorGraph:
    """Baseline graph keeping pairs with weight above (``gt``) or below (``lt``) ``tau``.

    Zero-weight pairs are never edges.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    if direction not in ("gt", "lt"):
        raise ValueError(f"direction must be 'gt' or 'lt', got {direction!r}")
    W = np.asarray(weights, dtype=float)
    n = W.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    w = W[iu, ju]
    keep = (w > tau) if direction == "gt" else (w < tau)
    keep &= w > 0.0
    edges = [(int(i), int(j), float(x)) for i, j, x in zip(iu[keep], ju[keep], w[keep])]
    return SensorGraph(n=n, edges=edges, epsilon=None, source_dim="baseline")


def rips_skeleton(D, weights, epsilon: float, source_dim, binary: bool = False) -> SensorGraph:
    """Graph with an edge for every pair at distance ``<= epsilon``."""
    n = D.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    keep = D[iu, ju] <= epsilon
    iu, ju = iu[keep], ju[keep]
    w = np.ones(len(iu)) if binary else np.asarray(weights)[iu, ju]
    edges = [(int(i), int(j), float(x)) for i, j, x in zip(iu, ju, w)]
    return SensorGraph(n=n, edges=edges, epsilon=float(epsilon), source_dim=source_dim)


def generate_ph_graphs(D, diagram: PersistenceDiagram, weights=None, binary: bool = False):
    """Build the ``(G0, G1, G01)`` graph families from the diagram's finite death times.

    Admitted edges carry the normalized proximity weights (or 1 with
    ``binary=True``, also used when all distances are equal). Within a
    family a repeated death time yields a single graph. ``G01``
    keeps one graph per family entry, so a death time shared by H0 and H1
    appears twice (H0 graph first).
    """
    D = validate_distance_matrix(D)
    if diagram.n_points and diagram.n_points != D.shape[0]:
        raise ValueError(f"diagram has {diagram.n_points} points but distance matrix has {D.shape[0]}")
    if weights is None and not binary:
        try:
            weights = normalize_edge_weights(D)
        except DegenerateScale:
            # every pair is equally close (e.g. two sensors): uniform weights
            binary = True
    finite = [p for p in diagram.pairs if p.is_finite]
    if not finite:
        raise EmptyDiagram("diagram has no finite death times")

    families = {}
    for dim in (0, 1):
        deaths = sorted({p.death for p in finite if p.dim == dim})
        families[dim] = GraphFamily(f"g{dim}", [rips_skeleton(D, weights, eps, dim, binary) for eps in deaths])
    union = sorted(families[0].graphs + families[1].graphs, key=lambda g: (g.epsilon, g.source_dim))
    return families[0], families[1], GraphFamily("g01", union)


def select_family(D, diagram, family: str, tau: float = 0.5, direction: str = "gt", binary: bool = False) -> GraphFamily:
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if family == "baseline":
        return GraphFamily("baseline", [threshold_graph(normalize_edge_weights(D), tau, direction)])
    g0, g1, g01 = generate_ph_graphs(D, diagram, binary=binary)
    return {"g0": g0, "g1": g1, "g01": g01}[family]


def propagation_operator(g: SensorGraph) -> np.ndarray:
    """Symmetric normalized adjacency with self-loops, ``D^-1/2 (A + I) D^-1/2``."""
    A = g.adjacency() + np.eye(g.n)
    d = A.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    # the outer product is exactly symmetric, so the operator is too
    return A * np.outer(inv_sqrt, inv_sqrt)


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_family(family: GraphFamily, out_dir) -> Path:
    """Write one ``i,j,weight`` CSV per graph plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for idx, g in enumerate(family.graphs):
        name = f"graph_{idx:03d}.csv"
        lines = ["i,j,weight"] + [f"{i},{j},{w!r}" for i, j, w in g.edges]
        _atomic_write_text(out / name, "\n".join(lines) + "\n")
        entries.append({
            "family": family.family,
            "epsilon": g.epsilon,
            "source_dim": g.source_dim,
            "n": g.n,
            "edge_count": g.edge_count,
            "file": name,
        })
    _atomic_write_text(out / "manifest.json", json.dumps({"family": family.family, "graphs": entries}, indent=2))
    return out / "manifest.json"


def read_family(in_dir) -> GraphFamily:
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text(encoding="utf-8"))
    graphs = []
    for entry in manifest["graphs"]:
        edges = []
        with open(src / entry["file"], newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                edges.append((int(row["i"]), int(row["j"]), float(row["weight"])))
        if len(edges) != entry["edge_count"]:
            raise ValueError(f"{entry['file']}: manifest lists {entry['edge_count']} edges, file has {len(edges)}")
        graphs.append(SensorGraph(entry["n"], edges, entry["epsilon"], entry["source_dim"]))
    return GraphFamily(manifest["family"], graphs)


def to_dot(g: SensorGraph, labels=None) -> str:
    """Graphviz rendering of one graph; pen width follows edge weight."""
    lines = [f'graph "eps={g.epsilon}" {{']
    for v in range(g.n):
        label = labels[v] if labels is not None else str(v)
        lines.append(f'  {v} [label="{label}"];')
    for i, j, w in g.edges:
        lines.append(f"  {i} -- {j} [weight={w:.6g}, penwidth={0.5 + 2.5 * w:.3f}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
