"""Weighted undirected graphs, Laplacians, and the estimator consensus operator.

Vertices are 1-based in edge lists (matching player indices); matrices are
0-based. Connectivity certificates go through the algebraic connectivity
lambda_2 of the Laplacian rather than a traversal, so the same eigensolve that
feeds the gain bounds also certifies the topology.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import SingularOperator, TooFewVertices, ValidationError


@dataclass(frozen=True)
class UndirectedGraph:
    """``n`` vertices and weighted edges (u, v, w) with 1-based endpoints."""

    n: int
    edges: tuple = ()

    def __post_init__(self):
        object.__setattr__(
            self,
            "edges",
            tuple((int(u), int(v), float(w)) for u, v, w in self.edges),
        )
        errs = []
        if self.n < 1:
            errs.append(f"graph needs at least one vertex, got n={self.n}")
        seen = set()
        for u, v, w in self.edges:
            if not (1 <= u <= self.n and 1 <= v <= self.n):
                errs.append(f"edge ({u}, {v}) endpoint out of range 1..{self.n}")
                continue
            if u == v:
                errs.append(f"self-loop at vertex {u} is not allowed")
            if not (np.isfinite(w) and w > 0.0):
                errs.append(f"edge ({u}, {v}) weight must be positive and finite, got {w}")
            key = (min(u, v), max(u, v))
            if key in seen:
                errs.append(f"duplicate edge {key}")
            seen.add(key)
        if errs:
            raise ValidationError(errs)

    def edge_weights(self) -> dict:
        """Canonical (min, max) endpoint pair to weight."""
        return {(min(u, v), max(u, v)): w for u, v, w in self.edges}


def adjacency(g: UndirectedGraph) -> np.ndarray:
    a = np.zeros((g.n, g.n))
    for u, v, w in g.edges:
        a[u - 1, v - 1] = w
        a[v - 1, u - 1] = w
    return a


def laplacian(g: UndirectedGraph) -> np.ndarray:
    """Weighted graph Laplacian L = D - A (symmetric PSD, zero row sums)."""
    a = adjacency(g)
    return np.diag(a.sum(axis=1)) - a


def algebraic_connectivity(g: UndirectedGraph) -> float:
    """Second-smallest Laplacian eigenvalue; positive iff the graph is connected."""
    if g.n < 2:
        raise TooFewVertices(f"algebraic connectivity needs n >= 2, got n={g.n}")
    return float(np.linalg.eigvalsh(laplacian(g))[1])


def is_connected(g: UndirectedGraph, tol: float = 1e-10) -> bool:
    if g.n == 1:
        return True
    return algebraic_connectivity(g) > tol


@dataclass(frozen=True)
class TopologySpec:
    """Global communication graph plus one intra-cluster graph per cluster.

    Cluster j's vertices map to global vertices offset by the sizes of the
    preceding clusters; every cluster edge must appear in the global graph with
    the same weight (the cluster graphs are induced pieces of the global one).
    """

    global_graph: UndirectedGraph
    cluster_graphs: tuple

    def __post_init__(self):
        object.__setattr__(self, "cluster_graphs", tuple(self.cluster_graphs))

    @property
    def cluster_sizes(self) -> tuple[int, ...]:
        return tuple(g.n for g in self.cluster_graphs)

    @cached_property
    def cluster_starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.cluster_sizes)[:-1]]).astype(np.intp)

    def validation_errors(self) -> list[str]:
        errs = []
        if not self.cluster_graphs:
            errs.append("topology needs at least one cluster graph")
            return errs
        total = sum(self.cluster_sizes)
        if total != self.global_graph.n:
            errs.append(
                f"cluster graphs cover {total} vertices but the global graph has "
                f"{self.global_graph.n}"
            )
            return errs
        global_w = self.global_graph.edge_weights()
        for j, g in enumerate(self.cluster_graphs, start=1):
            off = int(self.cluster_starts[j - 1])
            for u, v, w in g.edges:
                key = (min(u, v) + off, max(u, v) + off)
                if key not in global_w:
                    errs.append(
                        f"cluster {j} edge ({u}, {v}) is missing from the global graph"
                    )
                elif global_w[key] != w:
                    errs.append(
                        f"cluster {j} edge ({u}, {v}) weight {w} differs from the "
                        f"global weight {global_w[key]}"
                    )
            if g.n >= 2 and not is_connected(g):
                errs.append(f"cluster {j} graph is not connected")
        if self.global_graph.n >= 2 and not is_connected(self.global_graph):
            errs.append("global graph is not connected")
        return errs

    def validate(self) -> None:
        errs = self.validation_errors()
        if errs:
            raise ValidationError(errs)


def block_cluster_laplacian(topo: TopologySpec) -> np.ndarray:
    """Block-diagonal stack of the per-cluster Laplacians (drives the y integrator)."""
    n = sum(topo.cluster_sizes)
    out = np.zeros((n, n))
    for j, g in enumerate(topo.cluster_graphs):
        off = int(topo.cluster_starts[j])
        out[off : off + g.n, off : off + g.n] = laplacian(g)
    return out


def _per_target_blocks(topo: TopologySpec):
    """The estimator operator decouples per estimated target t into L0 + diag(A0[:, t])."""
    l0 = laplacian(topo.global_graph)
    a0 = adjacency(topo.global_graph)
    for t in range(topo.global_graph.n):
        yield l0 + np.diag(a0[:, t])


def estimator_spectrum(topo: TopologySpec) -> tuple[float, float]:
    """(min, max) eigenvalue of the estimator consensus operator."""
    lo, hi = np.inf, -np.inf
    for block in _per_target_blocks(topo):
        ev = np.linalg.eigvalsh(block)
        lo = min(lo, float(ev[0]))
        hi = max(hi, float(ev[-1]))
    return lo, hi


def estimator_operator(topo: TopologySpec, tol: float = 1e-10) -> np.ndarray:
    """Full consensus operator S = kron(L0, I) + diag(A0, observer-major).

    S acts on estimate stacks (one full copy of all decisions per observer);
    for q > 1 decision components the action is S applied componentwise. Raises
    SingularOperator when S is not positive definite, which happens exactly
    when the global graph is disconnected.
    """
    n = topo.global_graph.n
    l0 = laplacian(topo.global_graph)
    a0 = adjacency(topo.global_graph)
    s = np.kron(l0, np.eye(n)) + np.diag(a0.ravel())
    lam_min, _ = estimator_spectrum(topo)
    if lam_min <= tol:
        raise SingularOperator(
            f"estimator operator is not positive definite (min eigenvalue {lam_min:g}); "
            "the global graph must be connected"
        )
    return s
