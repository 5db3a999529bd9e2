"""Vietoris-Rips persistent homology in dimensions 0 and 1.

H0 is computed with a union-find sweep over edges (Kruskal order). H1 is
computed by reducing the coboundary matrix of edges, with columns stored as
Python integers used as bitsets over triangle indices (Z/2 coefficients).
Edges that already killed a component in H0 are cleared up front, which is
the usual clearing optimization for cohomology.

Simplex order is (filtration value, lexicographic vertex tuple). Edge value
is the pairwise distance, triangle value the largest of its three edges.
Zero-persistence pairs are dropped.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable

import numpy as np

from .geodesy import validate_distance_matrix

INF = math.inf
BRUTE_FORCE_LIMIT = 12


class InputTooLarge(ValueError):
    pass


@dataclass(frozen=True, order=True)
class PersistencePair:
    dim: int
    birth: float
    death: float

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.death)

    @property
    def lifespan(self) -> float:
        return self.death - self.birth


@dataclass(frozen=True)
class FiltrationBudget:
    max_dim: int = 1
    max_epsilon: float | None = None

    def __post_init__(self):
        if self.max_dim != 1:
            raise ValueError("only max_dim=1 (H0 and H1) is supported")


@dataclass
class PersistenceDiagram:
    pairs: list[PersistencePair] = field(default_factory=list)
    n_points: int = 0

    def __post_init__(self):
        self.pairs = sorted(self.pairs)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def in_dim(self, d: int) -> list[PersistencePair]:
        return [p for p in self.pairs if p.dim == d]

    def finite(self) -> list[PersistencePair]:
        return [p for p in self.pairs if p.is_finite]

    def as_array(self) -> np.ndarray:
        """``(k, 3)`` array of ``dim, birth, death`` rows."""
        return np.array([(p.dim, p.birth, p.death) for p in self.pairs], dtype=float).reshape(-1, 3)


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


def _sorted_edges(D: np.ndarray, cap: float | None):
    n = D.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    values = D[iu, ju]
    keep = np.ones(values.shape, dtype=bool) if cap is None else values <= cap
    iu, ju, values = iu[keep], ju[keep], values[keep]
    # lexsort: last key is primary
    order = np.lexsort((ju, iu, values))
    return iu[order], ju[order], values[order]


def _h0(D: np.ndarray, cap: float | None):
    n = D.shape[0]
    iu, ju, values = _sorted_edges(D, cap)
    uf = UnionFind(n)
    pairs = []
    killers = []  # positions (in edge order) of edges that merged components
    for pos, (i, j, v) in enumerate(zip(iu.tolist(), ju.tolist(), values.tolist())):
        if uf.union(i, j):
            killers.append(pos)
            if v > 0.0:
                pairs.append(PersistencePair(0, 0.0, v))
            if len(killers) == n - 1:
                break
    roots = {uf.find(x) for x in range(n)}
    pairs.extend(PersistencePair(0, 0.0, INF) for _ in roots)
    return pairs, (iu, ju, values), killers


def compute_h0(D, budget: FiltrationBudget | None = None) -> list[PersistencePair]:
    """Component merges of the Rips filtration: MST edge weights plus one infinite bar per component."""
    D = validate_distance_matrix(D)
    cap = budget.max_epsilon if budget else None
    return sorted(_h0(D, cap)[0])


def _h1(D: np.ndarray, cap: float | None, edges, killers) -> list[PersistencePair]:
    n = D.shape[0]
    if n < 3:
        return []
    iu, ju, evalues = edges
    n_edges = len(evalues)

    # Triangles ranked by (value, i, j, k); bit r of a cochain = triangle of rank r.
    trip = np.array(list(combinations(range(n), 3)), dtype=np.int64).reshape(-1, 3)
    a, b, c = trip[:, 0], trip[:, 1], trip[:, 2]
    tvalues = np.maximum(np.maximum(D[a, b], D[a, c]), D[b, c])
    if cap is not None:
        keep = tvalues <= cap
        trip, tvalues = trip[keep], tvalues[keep]
        a, b, c = trip[:, 0], trip[:, 1], trip[:, 2]
    order = np.lexsort((c, b, a, tvalues))
    rank_of = np.full((n, n, n), -1, dtype=np.int64)
    rank_of[a[order], b[order], c[order]] = np.arange(len(order))
    tvalues_sorted = tvalues[order]

    others = np.arange(n)

    def coboundary(i: int, j: int) -> int:
        k = others[(others != i) & (others != j)]
        lo = np.minimum(i, k)
        hi = np.maximum(j, k)
        mid = i + j + k - lo - hi
        ranks = rank_of[lo, mid, hi]
        ranks = ranks[ranks >= 0]
        if ranks.size == 0:
            return 0
        base = int(ranks.min())
        mask = np.zeros(int(ranks.max()) - base + 1, dtype=bool)
        mask[ranks - base] = True
        return int.from_bytes(np.packbits(mask, bitorder="little").tobytes(), "little") << base

    cleared = set(killers)
    pivot_owner: dict[int, int] = {}
    reduced: dict[int, int] = {}
    pairs = []
    # Columns in reverse filtration order; the pivot of a column is its
    # earliest triangle, i.e. the lowest set bit.
    for pos in range(n_edges - 1, -1, -1):
        if pos in cleared:
            continue
        col = coboundary(int(iu[pos]), int(ju[pos]))
        while col:
            low = (col & -col).bit_length() - 1
            owner = pivot_owner.get(low)
            if owner is None:
                break
            col ^= reduced[owner]
        birth = float(evalues[pos])
        if col:
            low = (col & -col).bit_length() - 1
            pivot_owner[low] = pos
            reduced[pos] = col
            death = float(tvalues_sorted[low])
            if death > birth:
                pairs.append(PersistencePair(1, birth, death))
        else:
            pairs.append(PersistencePair(1, birth, INF))
    return pairs


def compute_h1(D, budget: FiltrationBudget | None = None) -> list[PersistencePair]:
    """Loops of the Rips filtration, as (birth, death) pairs with positive lifespan."""
    D = validate_distance_matrix(D)
    cap = budget.max_epsilon if budget else None
    _, edges, killers = _h0(D, cap)
    return sorted(_h1(D, cap, edges, killers))


def compute_diagram(D, budget: FiltrationBudget | None = None) -> PersistenceDiagram:
    D = validate_distance_matrix(D)
    cap = budget.max_epsilon if budget else None
    h0, edges, killers = _h0(D, cap)
    h1 = _h1(D, cap, edges, killers)
    return PersistenceDiagram(h0 + h1, n_points=D.shape[0])


def brute_force_diagram(D, budget: FiltrationBudget | None = None) -> PersistenceDiagram:
    """Reference diagram from a plain reduction of the full boundary matrix.

    No clearing, no cohomology, no union-find: every vertex, edge and
    triangle gets a column and columns are reduced left to right. Only
    meant for small inputs.
    """
    D = validate_distance_matrix(D)
    n = D.shape[0]
    if n > BRUTE_FORCE_LIMIT:
        raise InputTooLarge(f"brute-force reduction is limited to {BRUTE_FORCE_LIMIT} points, got {n}")
    cap = budget.max_epsilon if budget else None

    simplices = []
    for k in (1, 2, 3):
        for s in combinations(range(n), k):
            value = max((D[x, y] for x, y in combinations(s, 2)), default=0.0)
            if cap is not None and value > cap:
                continue
            simplices.append((value, k - 1, s))
    simplices.sort()
    index = {s: idx for idx, (_, _, s) in enumerate(simplices)}
    columns = []
    for value, dim, s in simplices:
        if dim == 0:
            columns.append(set())
        else:
            columns.append({index[f] for f in combinations(s, dim)})

    low_of: dict[int, int] = {}
    paired = set()
    pairs = []
    for j, col in enumerate(columns):
        while col and max(col) in low_of:
            col ^= columns[low_of[max(col)]]
        if col:
            i = max(col)
            low_of[i] = j
            paired.update((i, j))
            birth, dim = simplices[i][0], simplices[i][1]
            death = simplices[j][0]
            if death > birth:
                pairs.append(PersistencePair(dim, float(birth), float(death)))
    for j, col in enumerate(columns):
        if j not in paired and not col and simplices[j][1] <= 1:
            pairs.append(PersistencePair(simplices[j][1], float(simplices[j][0]), INF))
    return PersistenceDiagram(pairs, n_points=n)


def betti_at(diagram: PersistenceDiagram, eps: float, d: int) -> int:
    """Number of ``d``-dimensional features alive at scale ``eps``."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    return sum(1 for p in diagram.pairs if p.dim == d and p.birth <= eps < p.death)


def write_diagram_csv(diagram: PersistenceDiagram, path) -> None:
    lines = ["dim,birth,death"]
    lines += [f"{p.dim},{p.birth!r},{'inf' if not p.is_finite else repr(p.death)}" for p in diagram.pairs]
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_diagram_csv(path, n_points: int = 0) -> PersistenceDiagram:
    pairs = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["dim", "birth", "death"]:
            raise ValueError(f"{path}: expected header dim,birth,death")
        for row in reader:
            pairs.append(PersistencePair(int(row["dim"]), float(row["birth"]), float(row["death"])))
    if not n_points:
        n_points = sum(1 for p in pairs if p.dim == 0)
    return PersistenceDiagram(pairs, n_points=n_points)


def barcode(diagram: PersistenceDiagram, dim: int | None = None) -> list[tuple[float, float]]:
    """Intervals ``[birth, death)`` of the diagram, optionally for one dimension."""
    return [(p.birth, p.death) for p in diagram.pairs if dim is None or p.dim == dim]


def diagrams_close(a: Iterable[PersistencePair], b: Iterable[PersistencePair], tol: float = 1e-9) -> bool:
    """Multiset equality of two pair collections up to ``tol`` on finite values."""
    a, b = sorted(a), sorted(b)
    if len(a) != len(b):
        return False
    for p, q in zip(a, b):
        if p.dim != q.dim or abs(p.birth - q.birth) > tol:
            return False
        if math.isinf(p.death) or math.isinf(q.death):
            if p.death != q.death:
                return False
        elif abs(p.death - q.death) > tol:
            return False
    return True
