"""Areal adjacency graphs and Leroux CAR (LCAR) primitives.

The LCAR precision used throughout is

    Q = (1 / sigma2) * (rho * (D - W) + (1 - rho) * I)

with W the binary adjacency matrix and D its degree diagonal.  The log
determinant is evaluated from the cached eigenvalues of the Laplacian
R = D - W, so a change of ``rho`` costs O(M).
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_triangular
from scipy.sparse import csgraph

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


class AdjacencyError(ValueError):
    """Raised for malformed or inconsistent adjacency input."""


@dataclass(frozen=True, eq=False)
class AdjacencyGraph:
    num_areas: int
    neighbor_lists: tuple[tuple[int, ...], ...]
    degrees: np.ndarray = field(repr=False)
    laplacian_eigenvalues: np.ndarray = field(repr=False)
    # CSR view of the neighbor lists, used by the compiled sweep kernels.
    nb_ptr: np.ndarray = field(repr=False)
    nb_idx: np.ndarray = field(repr=False)

    @property
    def num_edges(self) -> int:
        return int(self.degrees.sum()) // 2

    def adjacency_matrix(self) -> sp.csr_matrix:
        data = np.ones(len(self.nb_idx))
        return sp.csr_matrix(
            (data, self.nb_idx, self.nb_ptr), shape=(self.num_areas, self.num_areas)
        )

    def laplacian(self) -> sp.csr_matrix:
        return (sp.diags(self.degrees.astype(float)) - self.adjacency_matrix()).tocsr()

    def precision(self, rho: float, sigma2: float = 1.0) -> sp.csr_matrix:
        """Sparse LCAR precision matrix Q."""
        _check_params(rho, sigma2)
        q = rho * self.laplacian() + (1.0 - rho) * sp.identity(self.num_areas)
        return (q / sigma2).tocsr()

    def components(self) -> np.ndarray:
        """Connected-component label per area."""
        _, labels = csgraph.connected_components(self.adjacency_matrix(), directed=False)
        return labels

    def quad_laplacian(self, theta: np.ndarray) -> float:
        """theta' (D - W) theta, accumulated over edges."""
        theta = np.asarray(theta, dtype=float)
        src = np.repeat(np.arange(self.num_areas), np.diff(self.nb_ptr))
        # each undirected edge is listed twice in the CSR structure
        return 0.5 * float(np.sum((theta[src] - theta[self.nb_idx]) ** 2))

    def relabel(self, perm: np.ndarray) -> "AdjacencyGraph":
        """Graph with area ``perm[i]`` renamed to ``i``."""
        perm = np.asarray(perm)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        edges = [
            (int(inverse[i]), int(inverse[j]))
            for i, nbrs in enumerate(self.neighbor_lists)
            for j in nbrs
            if i < j
        ]
        return from_edges(self.num_areas, edges)


def from_edges(num_areas: int, edges) -> AdjacencyGraph:
    """Build a validated graph from undirected edges.

    Each edge may be listed once or in both directions.  Self-loops and
    out-of-range indices raise :class:`AdjacencyError`.
    """
    if num_areas < 1:
        raise AdjacencyError("graph needs at least one area")
    nbrs: list[set[int]] = [set() for _ in range(num_areas)]
    for i, j in edges:
        i, j = int(i), int(j)
        if not (0 <= i < num_areas and 0 <= j < num_areas):
            raise AdjacencyError(f"edge ({i}, {j}) out of range for {num_areas} areas")
        if i == j:
            raise AdjacencyError(f"self-loop at area {i}")
        nbrs[i].add(j)
        nbrs[j].add(i)
    neighbor_lists = tuple(tuple(sorted(s)) for s in nbrs)
    degrees = np.array([len(s) for s in neighbor_lists], dtype=np.int64)
    nb_ptr = np.concatenate([[0], np.cumsum(degrees)]).astype(np.int64)
    nb_idx = np.array([j for s in neighbor_lists for j in s], dtype=np.int64)

    lap = np.diag(degrees.astype(float))
    if len(nb_idx):
        src = np.repeat(np.arange(num_areas), degrees)
        lap[src, nb_idx] -= 1.0
    eig = np.linalg.eigvalsh(lap)
    eig = np.sort(np.clip(eig, 0.0, None))

    graph = AdjacencyGraph(
        num_areas=num_areas,
        neighbor_lists=neighbor_lists,
        degrees=degrees,
        laplacian_eigenvalues=eig,
        nb_ptr=nb_ptr,
        nb_idx=nb_idx,
    )
    _warn_structure(graph)
    return graph


def _warn_structure(graph: AdjacencyGraph) -> None:
    if graph.num_areas == 1:
        return
    islands = np.flatnonzero(graph.degrees == 0)
    if len(islands):
        log.warning("%d island area(s) without neighbors: %s", len(islands), islands[:20].tolist())
    labels = graph.components()
    sizes = np.bincount(labels)
    if len(sizes) > 1:
        log.warning("graph has %d connected components, sizes %s", len(sizes), sorted(sizes.tolist(), reverse=True))


def load_adjacency(path: str | os.PathLike, num_areas: int | None = None) -> AdjacencyGraph:
    """Read a whitespace-separated 0-based edge list.

    Lines starting with ``#`` are comments.  A line holding a single integer
    declares an isolated area index, which lets files describe islands and
    the one-area graph.  ``num_areas`` defaults to one past the largest
    index seen.
    """
    edges = []
    max_index = -1
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                idx = [int(p) for p in parts]
            except ValueError:
                raise AdjacencyError(f"{path}:{lineno}: cannot parse {raw.strip()!r}") from None
            if len(idx) not in (1, 2) or min(idx) < 0:
                raise AdjacencyError(f"{path}:{lineno}: expected 'i j', got {raw.strip()!r}")
            max_index = max(max_index, *idx)
            if len(idx) == 2:
                edges.append((idx[0], idx[1]))
    if num_areas is None:
        num_areas = max_index + 1
    if num_areas < 1:
        raise AdjacencyError(f"{path}: no areas declared")
    return from_edges(num_areas, edges)


def write_adjacency(graph: AdjacencyGraph, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {graph.num_areas} areas, {graph.num_edges} edges\n")
        for i, nbrs in enumerate(graph.neighbor_lists):
            if not nbrs:
                fh.write(f"{i}\n")
            for j in nbrs:
                if i < j:
                    fh.write(f"{i} {j}\n")


def _check_params(rho: float, sigma2: float) -> None:
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    if not sigma2 > 0.0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")


def lcar_logdet(rho: float, graph: AdjacencyGraph) -> float:
    """log det(rho * R + (1 - rho) * I) from cached eigenvalues."""
    return float(np.sum(np.log(rho * graph.laplacian_eigenvalues + 1.0 - rho)))


def lcar_logdensity(theta, rho: float, sigma2: float, graph: AdjacencyGraph) -> float:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (graph.num_areas,):
        raise ValueError(f"theta must have shape ({graph.num_areas},), got {theta.shape}")
    _check_params(rho, sigma2)
    m = graph.num_areas
    quad = rho * graph.quad_laplacian(theta) + (1.0 - rho) * float(theta @ theta)
    return (
        -0.5 * m * (LOG_2PI + np.log(sigma2))
        + 0.5 * lcar_logdet(rho, graph)
        - 0.5 * quad / sigma2
    )


def lcar_sample(rho: float, sigma2: float, graph: AdjacencyGraph, rng_seed=None) -> np.ndarray:
    """Exact LCAR draw: solve L' x = z with Q = L L'."""
    _check_params(rho, sigma2)
    rng = np.random.default_rng(rng_seed)
    q = graph.precision(rho, sigma2).toarray()
    chol = np.linalg.cholesky(q)
    z = rng.standard_normal(graph.num_areas)
    return solve_triangular(chol.T, z, lower=False)
