"""Model definition and exact density evaluation.

Three variants share one linear predictor for respondent ``i`` and item ``k``::

    logit P(Y_ik <= j) = kappa[g(i), k, j] + alpha[z_i, k] + theta[m_i, k] + psi[i, k]

with ``Theta = Phi @ M`` and, for the individual-effects variant,
``Psi = Phi_tilde @ M_tilde``.  ``g(i)`` is 0 for shared cut points or the
respondent's cell for per-cell cut points.  The independent variant stores
``Theta`` directly in ``phi`` and fixes ``M`` to the identity.

Indices are 0-based in memory; categories are 1..J with 0 marking a
missing response.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit, logit

from .graph import LOG_2PI, AdjacencyGraph, lcar_logdensity

MISSING = 0


class Variant(str, enum.Enum):
    INDEP = "indep"
    CORR = "corr"
    CORR_IRE = "corr_ire"


class CutpointMode(str, enum.Enum):
    SHARED = "shared"
    PER_CELL = "per_cell"


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant
    num_categories: int
    num_variables: int
    num_cells: int
    num_areas: int
    cutpoint_mode: CutpointMode = CutpointMode.PER_CELL
    include_alpha: bool = False
    sigma_upper: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "cutpoint_mode", CutpointMode(self.cutpoint_mode))
        if self.num_categories < 2:
            raise ValueError("need at least two categories")
        if min(self.num_variables, self.num_cells, self.num_areas) < 1:
            raise ValueError("K, Z and M must be positive")
        if self.include_alpha and self.cutpoint_mode is CutpointMode.PER_CELL:
            raise ValueError("include_alpha requires shared cut points")
        if not self.sigma_upper > 0:
            raise ValueError("sigma_upper must be positive")

    @property
    def num_cut_groups(self) -> int:
        return self.num_cells if self.cutpoint_mode is CutpointMode.PER_CELL else 1

    @property
    def has_mixing(self) -> bool:
        return self.variant is not Variant.INDEP

    @property
    def has_ire(self) -> bool:
        return self.variant is Variant.CORR_IRE

    def cut_group(self, cell: np.ndarray) -> np.ndarray:
        if self.cutpoint_mode is CutpointMode.PER_CELL:
            return np.asarray(cell)
        return np.zeros_like(np.asarray(cell))


@dataclass(frozen=True, eq=False)
class SurveyDataset:
    """Respondents with a covariate cell, an area and K ordinal answers."""

    responses: np.ndarray
    cell_index: np.ndarray
    area_index: np.ndarray
    num_categories: int
    num_cells: int
    num_areas: int
    respondent_ids: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        y = np.asarray(self.responses, dtype=np.int64)
        if y.ndim != 2:
            raise ValueError("responses must be an n x K matrix")
        cell = np.asarray(self.cell_index, dtype=np.int64).reshape(-1)
        area = np.asarray(self.area_index, dtype=np.int64).reshape(-1)
        if not len(cell) == len(area) == y.shape[0]:
            raise ValueError("cell_index, area_index and responses disagree on n")
        if np.any((y < 0) | (y > self.num_categories)):
            raise ValueError(f"responses must lie in 1..{self.num_categories} or be missing")
        if np.any((cell < 0) | (cell >= self.num_cells)):
            raise ValueError("cell index out of range")
        if np.any((area < 0) | (area >= self.num_areas)):
            raise ValueError("area index out of range")
        ids = self.respondent_ids
        ids = np.arange(1, len(cell) + 1) if ids is None else np.asarray(ids)
        for name, arr in (("responses", y), ("cell_index", cell), ("area_index", area), ("respondent_ids", ids)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_respondents(self) -> int:
        return self.responses.shape[0]

    @property
    def num_variables(self) -> int:
        return self.responses.shape[1]

    @property
    def area_sample_sizes(self) -> np.ndarray:
        return np.bincount(self.area_index, minlength=self.num_areas)

    @property
    def observed(self) -> np.ndarray:
        return self.responses != MISSING

    @property
    def num_observations(self) -> int:
        return int(self.observed.sum())

    def subset(self, rows) -> "SurveyDataset":
        rows = np.asarray(rows)
        return SurveyDataset(
            self.responses[rows], self.cell_index[rows], self.area_index[rows],
            self.num_categories, self.num_cells, self.num_areas, self.respondent_ids[rows],
        )

    @classmethod
    def empty(cls, num_variables, num_categories, num_cells, num_areas) -> "SurveyDataset":
        return cls(
            np.zeros((0, num_variables), dtype=np.int64), np.zeros(0, np.int64),
            np.zeros(0, np.int64), num_categories, num_cells, num_areas,
        )


@dataclass(eq=False)
class ParameterState:
    """One point in parameter space.  Chain-private and mutable."""

    delta: np.ndarray                       # (G, K, J) simplexes
    phi: np.ndarray                         # (M, K)
    mixing: np.ndarray                      # (K, K)
    rho: np.ndarray                         # (K,)
    alpha: np.ndarray | None = None         # (Z, K), alpha[0] == 0
    sigma: np.ndarray | None = None         # (K,), independent variant
    sigma_M: float | None = None
    ire_phi: np.ndarray | None = None       # (n, K)
    ire_mixing: np.ndarray | None = None    # (K, K)
    sigma_Mtilde: float | None = None

    @property
    def kappa(self) -> np.ndarray:
        return cutpoints_from_simplex(self.delta)

    @property
    def theta(self) -> np.ndarray:
        return self.phi @ self.mixing

    @property
    def psi(self) -> np.ndarray | None:
        if self.ire_phi is None:
            return None
        return self.ire_phi @ self.ire_mixing

    @property
    def sigma_b(self) -> np.ndarray:
        return self.mixing.T @ self.mixing

    @property
    def sigma_b_tilde(self) -> np.ndarray | None:
        if self.ire_mixing is None:
            return None
        return self.ire_mixing.T @ self.ire_mixing

    def copy(self) -> "ParameterState":
        kw = {}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            kw[name] = v.copy() if isinstance(v, np.ndarray) else v
        return ParameterState(**kw)


def cutpoints_from_simplex(delta) -> np.ndarray:
    """kappa_j = logit(delta_1 + ... + delta_j) along the last axis."""
    delta = np.asarray(delta, dtype=float)
    if delta.shape[-1] < 2:
        raise ValueError("simplex needs at least two components")
    if np.any(delta <= 0) or not np.allclose(delta.sum(axis=-1), 1.0, atol=1e-9):
        raise ValueError("delta is not a strictly positive simplex")
    cum = np.cumsum(delta, axis=-1)[..., :-1]
    return logit(np.clip(cum, 0.0, 1.0))


def simplex_from_cutpoints(kappa) -> np.ndarray:
    kappa = np.asarray(kappa, dtype=float)
    cum = expit(kappa)
    zero = np.zeros(kappa.shape[:-1] + (1,))
    return np.diff(np.concatenate([zero, cum, zero + 1.0], axis=-1), axis=-1)


def category_probs(eta, cutpoints) -> np.ndarray:
    """Category probabilities under the cumulative logit.

    ``eta`` broadcasts against the leading axes of ``cutpoints``; output has a
    trailing axis of length J.
    """
    cutpoints = np.asarray(cutpoints, dtype=float)
    if cutpoints.shape[-1] > 1 and np.any(np.diff(cutpoints, axis=-1) <= 0):
        raise ValueError("cut points must be strictly increasing")
    eta = np.asarray(eta, dtype=float)[..., None]
    gamma = expit(cutpoints + eta)
    shape = np.broadcast_shapes(gamma.shape[:-1])
    lo = np.concatenate([np.zeros(shape + (1,)), gamma], axis=-1)
    hi = np.concatenate([gamma, np.ones(shape + (1,))], axis=-1)
    return hi - lo


def log_category_prob(y, eta, kappa_lo, kappa_hi) -> np.ndarray:
    """log P(Y = y) from the bracketing cut points, stable in the tails.

    ``kappa_lo`` is -inf for the first category and ``kappa_hi`` is +inf for
    the last.  Uses sigma(a) - sigma(b) = sigma(a) sigma(-b) (1 - e^(b - a)).
    """
    a = np.asarray(kappa_hi, dtype=float) + eta
    b = np.asarray(kappa_lo, dtype=float) + eta
    with np.errstate(invalid="ignore"):
        out = log_expit(a) + log_expit(-b)
        gap = np.where(np.isfinite(a) & np.isfinite(b), b - a, -np.inf)
        out = out + np.log(-np.expm1(gap))
    return out


def linear_predictor(state: ParameterState, spec: ModelSpec, data: SurveyDataset, respondent: int, k: int) -> float:
    if not (0 <= respondent < data.num_respondents and 0 <= k < spec.num_variables):
        raise IndexError(f"respondent {respondent}, variable {k} out of range")
    m = data.area_index[respondent]
    value = float(state.phi[m] @ state.mixing[:, k])
    if state.alpha is not None:
        value += state.alpha[data.cell_index[respondent], k]
    if state.ire_phi is not None:
        value += float(state.ire_phi[respondent] @ state.ire_mixing[:, k])
    return value


def linear_predictors(state: ParameterState, spec: ModelSpec, data: SurveyDataset) -> np.ndarray:
    """(n, K) matrix of cut-point-free linear predictors."""
    eta = state.theta[data.area_index]
    if state.alpha is not None:
        eta = eta + state.alpha[data.cell_index]
    if state.ire_phi is not None:
        eta = eta + state.psi
    return eta


def _bracketing_cutpoints(state, spec, data):
    kappa = state.kappa
    n, K = data.responses.shape
    G = kappa.shape[0]
    padded = np.concatenate(
        [np.full((G, K, 1), -np.inf), kappa, np.full((G, K, 1), np.inf)], axis=-1
    )
    g = spec.cut_group(data.cell_index)
    y = data.responses
    ks = np.broadcast_to(np.arange(K), (n, K))
    gg = np.broadcast_to(g[:, None], (n, K))
    yy = np.where(y == MISSING, 1, y)
    return padded[gg, ks, yy - 1], padded[gg, ks, yy]


def loglik(state: ParameterState, spec: ModelSpec, data: SurveyDataset) -> tuple[float, np.ndarray]:
    """Total log-likelihood and the (n, K) pointwise matrix (NaN where missing)."""
    _check_dims(state, spec, data)
    if data.num_respondents == 0:
        return 0.0, np.zeros((0, spec.num_variables))
    eta = linear_predictors(state, spec, data)
    lo, hi = _bracketing_cutpoints(state, spec, data)
    ll = log_category_prob(data.responses, eta, lo, hi)
    ll = np.where(data.observed, ll, np.nan)
    return float(np.nansum(ll)), ll


def _normal_logpdf_sum(x, scale) -> float:
    x = np.asarray(x, dtype=float)
    return float(-0.5 * x.size * (LOG_2PI + 2.0 * np.log(scale)) - 0.5 * np.sum(x * x) / scale**2)


def in_support(state: ParameterState, spec: ModelSpec) -> bool:
    if np.any(state.delta <= 0) or not np.allclose(state.delta.sum(axis=-1), 1.0, atol=1e-9):
        return False
    if np.any(state.rho <= 0) or np.any(state.rho >= 1):
        return False
    upper = spec.sigma_upper
    scales = []
    if spec.variant is Variant.INDEP:
        scales.extend(np.atleast_1d(state.sigma))
    else:
        scales.append(state.sigma_M)
    if spec.has_ire:
        scales.append(state.sigma_Mtilde)
    return all(0 < s <= upper for s in scales)


def logprior(state: ParameterState, spec: ModelSpec, graph: AdjacencyGraph) -> float:
    """Joint log prior density; -inf outside the support.

    Flat terms (Dirichlet(1) cut points, alpha, bounded uniforms on the
    scales and rho) contribute zero on their support.
    """
    if not in_support(state, spec):
        return -np.inf
    total = 0.0
    for k in range(spec.num_variables):
        sigma2 = state.sigma[k] ** 2 if spec.variant is Variant.INDEP else 1.0
        total += lcar_logdensity(state.phi[:, k], float(state.rho[k]), sigma2, graph)
    if spec.has_mixing:
        total += _normal_logpdf_sum(state.mixing, state.sigma_M)
    if spec.has_ire:
        total += _normal_logpdf_sum(state.ire_phi, 1.0)
        total += _normal_logpdf_sum(state.ire_mixing, state.sigma_Mtilde)
    return total


def logposterior(state: ParameterState, spec: ModelSpec, data: SurveyDataset, graph: AdjacencyGraph) -> float:
    lp = logprior(state, spec, graph)
    if not np.isfinite(lp):
        return -np.inf
    return loglik(state, spec, data)[0] + lp


def shift_simplex(delta, shift) -> np.ndarray:
    """Simplex whose cut points are those of ``delta`` plus ``shift``.

    ``shift`` broadcasts against ``delta.shape[:-1]``.
    """
    delta = np.asarray(delta, dtype=float)
    cum = np.cumsum(delta, axis=-1)[..., :-1]
    kappa = logit(cum) + np.asarray(shift, dtype=float)[..., None]
    return simplex_from_cutpoints(kappa)


def center_state(state: ParameterState, area_sizes) -> ParameterState:
    """Impose sum_m n_m phi[m, k] = 0, compensating the cut points.

    Removing ``c`` from column k of Phi lowers Theta by ``c @ M`` and the same
    amount is added to every cut point of the affected items, so the
    likelihood is unchanged.  No-op when there are no respondents.
    """
    w = np.asarray(area_sizes, dtype=float)
    total = w.sum()
    if total <= 0:
        return state
    c = (w @ state.phi) / total
    state.phi = state.phi - c
    state.delta = shift_simplex(state.delta, (c @ state.mixing)[None, :])
    return state


def with_theta_shift(state: ParameterState, shift) -> ParameterState:
    """Shift Theta columns by ``-shift`` and cut points by ``+shift``."""
    shift = np.asarray(shift, dtype=float)
    new = state.copy()
    new.phi = state.phi - shift @ np.linalg.inv(state.mixing)
    new.delta = shift_simplex(state.delta, shift[None, :])
    return new


def _check_dims(state: ParameterState, spec: ModelSpec, data: SurveyDataset) -> None:
    K, J = spec.num_variables, spec.num_categories
    if data.num_variables != K or data.num_categories != J:
        raise ValueError("dataset does not match the model dimensions")
    if data.num_areas != spec.num_areas or data.num_cells != spec.num_cells:
        raise ValueError("dataset areas/cells do not match the model")
    if state.delta.shape != (spec.num_cut_groups, K, J):
        raise ValueError(f"delta has shape {state.delta.shape}, expected {(spec.num_cut_groups, K, J)}")
    if state.phi.shape != (spec.num_areas, K) or state.mixing.shape != (K, K):
        raise ValueError("phi or mixing has the wrong shape")
    if spec.has_ire and (state.ire_phi is None or state.ire_phi.shape != (data.num_respondents, K)):
        raise ValueError("individual effects missing or misshaped")


def zero_state(spec: ModelSpec, num_respondents: int = 0) -> ParameterState:
    """Uniform cut points and all effects at zero; scales at one."""
    K, J = spec.num_variables, spec.num_categories
    state = ParameterState(
        delta=np.full((spec.num_cut_groups, K, J), 1.0 / J),
        phi=np.zeros((spec.num_areas, K)),
        mixing=np.eye(K),
        rho=np.full(K, 0.5),
    )
    if spec.include_alpha:
        state.alpha = np.zeros((spec.num_cells, K))
    if spec.variant is Variant.INDEP:
        state.sigma = np.ones(K)
    else:
        state.sigma_M = 1.0
    if spec.has_ire:
        state.ire_phi = np.zeros((num_respondents, K))
        state.ire_mixing = np.eye(K)
        state.sigma_Mtilde = 1.0
    return state


__all__ = [
    "MISSING", "Variant", "CutpointMode", "ModelSpec", "SurveyDataset", "ParameterState",
    "cutpoints_from_simplex", "simplex_from_cutpoints", "category_probs", "log_category_prob",
    "linear_predictor", "linear_predictors", "loglik", "logprior", "logposterior",
    "in_support", "shift_simplex", "center_state", "with_theta_shift", "zero_state",
]
