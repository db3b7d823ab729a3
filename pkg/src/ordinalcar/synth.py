"""Synthetic surveys drawn from the model itself, for recovery testing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import AdjacencyGraph, from_edges, lcar_sample
from .model import (
    ModelSpec,
    ParameterState,
    SurveyDataset,
    Variant,
    category_probs,
    center_state,
    linear_predictors,
)


def grid_graph(rows: int, cols: int) -> AdjacencyGraph:
    """Rook adjacency on a rows x cols lattice, areas numbered row-major."""
    if rows < 1 or cols < 1:
        raise ValueError("grid dimensions must be positive")
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return from_edges(rows * cols, edges)


@dataclass
class TrueParameters:
    """Generating parameters plus the sampling design.

    ``state.phi`` (and ``state.ire_phi`` for the individual-effects variant)
    may be ``None``, in which case they are drawn from their priors.
    """

    state: ParameterState
    area_sizes: np.ndarray
    cell_probs: np.ndarray

    def __post_init__(self):
        self.area_sizes = np.asarray(self.area_sizes, dtype=np.int64)
        self.cell_probs = np.asarray(self.cell_probs, dtype=float)
        if np.any(self.area_sizes <= 0):
            raise ValueError("area sample sizes must be positive")
        if np.any(self.cell_probs < 0) or not np.isclose(self.cell_probs.sum(), 1.0):
            raise ValueError("cell_probs must be a probability vector")


@dataclass
class SyntheticSurvey:
    data: SurveyDataset
    truth: ParameterState        # centred, identified parameterisation
    theta: np.ndarray            # (M, K)
    psi: np.ndarray | None       # (n, K)


def generate_dataset(truth: TrueParameters, spec: ModelSpec, graph: AdjacencyGraph, seed=None) -> SyntheticSurvey:
    rng = np.random.default_rng(seed)
    M, K, Z, J = spec.num_areas, spec.num_variables, spec.num_cells, spec.num_categories
    if graph.num_areas != M or len(truth.area_sizes) != M or len(truth.cell_probs) != Z:
        raise ValueError("truth, spec and graph disagree on dimensions")
    state = truth.state.copy()
    if state.delta.shape != (spec.num_cut_groups, K, J):
        raise ValueError("truth cut points do not match the spec")

    area = np.repeat(np.arange(M), truth.area_sizes)
    n = len(area)
    cell = rng.choice(Z, size=n, p=truth.cell_probs)

    if state.phi is None:
        phi = np.empty((M, K))
        for k in range(K):
            s2 = state.sigma[k] ** 2 if spec.variant is Variant.INDEP else 1.0
            phi[:, k] = lcar_sample(float(state.rho[k]), s2, graph, rng)
        state.phi = phi
    if state.phi.shape != (M, K):
        raise ValueError("truth phi has the wrong shape")
    if spec.has_ire and state.ire_phi is None:
        state.ire_phi = rng.standard_normal((n, K))
    if not spec.has_ire:
        state.ire_phi = state.ire_mixing = state.sigma_Mtilde = None

    state = center_state(state, truth.area_sizes)
    placeholder = SurveyDataset(np.zeros((n, K), np.int64), cell, area, J, Z, M)
    eta = linear_predictors(state, spec, placeholder)
    kappa = state.kappa[spec.cut_group(cell)]               # (n, K, J-1)
    probs = category_probs(eta, kappa)                      # (n, K, J)
    cum = np.cumsum(probs, axis=-1)
    u = rng.random((n, K, 1))
    y = 1 + np.minimum((u > cum).sum(axis=-1), J - 1)

    data = SurveyDataset(y, cell, area, J, Z, M)
    return SyntheticSurvey(data=data, truth=state, theta=state.theta, psi=state.psi)


def mixing_for_correlation(corr, scales) -> np.ndarray:
    """Upper-triangular M with M'M = diag(scales) corr diag(scales)."""
    corr = np.asarray(corr, dtype=float)
    s = np.asarray(scales, dtype=float)
    cov = corr * np.outer(s, s)
    return np.linalg.cholesky(cov).T
