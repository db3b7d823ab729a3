"""Post-fit summaries: areal effects, correlations, PCA, predictive checks
and post-stratified proportions."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import MISSING, SurveyDataset, category_probs
from .sampler import PosteriorDraws

log = logging.getLogger(__name__)

RELEVANCE_HIGH = 0.80
RELEVANCE_LOW = 0.20


@dataclass
class ArealSummary:
    theta_mean: np.ndarray   # (M, K)
    relevance: np.ndarray    # (M, K), P(theta < 0)
    q025: np.ndarray
    q975: np.ndarray

    @property
    def num_areas(self) -> int:
        return self.theta_mean.shape[0]

    def relevant(self, high: float = RELEVANCE_HIGH, low: float = RELEVANCE_LOW) -> np.ndarray:
        """+1 where P(theta < 0) > high (worse), -1 where < low (better), else 0."""
        return np.where(self.relevance > high, 1, np.where(self.relevance < low, -1, 0))


def _theta_draws(draws) -> np.ndarray:
    if isinstance(draws, PosteriorDraws):
        return draws.flat("theta")
    theta = np.asarray(draws, dtype=float)
    if theta.ndim == 2:
        theta = theta[:, :, None]
    return theta


def areal_summaries(draws, level: float = 0.95) -> ArealSummary:
    """Posterior mean, relevance P(theta_mk < 0) and central interval per (area, item).

    ``draws`` is a :class:`PosteriorDraws` or an array of Theta draws shaped
    (S, M, K).
    """
    theta = _theta_draws(draws)
    if theta.shape[0] == 0:
        raise ValueError("empty archive")
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(theta, [a, 1.0 - a], axis=0)
    return ArealSummary(
        theta_mean=theta.mean(axis=0),
        relevance=(theta < 0).mean(axis=0),
        q025=lo,
        q975=hi,
    )


@dataclass
class CorrelationReport:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    relevant: np.ndarray     # interval excludes zero
    num_draws: int


def _covariance_draws(draws, level: str) -> np.ndarray:
    if not isinstance(draws, PosteriorDraws):
        return np.asarray(draws, dtype=float)
    if level == "areal":
        if "mixing" not in draws.params or draws.spec.variant.value == "indep":
            raise ValueError("areal correlations need a mixed (corr or corr_ire) fit")
        return draws.flat("Sigma_b")
    if level == "individual":
        if "Sigma_b_tilde" not in draws.params:
            raise ValueError("individual correlations need a corr_ire fit")
        return draws.flat("Sigma_b_tilde")
    raise ValueError(f"unknown level {level!r}; use 'areal' or 'individual'")


def correlation_report(draws, level: str = "areal", credible: float = 0.95) -> CorrelationReport:
    """Correlation matrix summaries from per-draw covariance matrices.

    ``draws`` is a :class:`PosteriorDraws` or an array of covariance draws
    (S, K, K).  Draws with a zero diagonal entry are skipped.
    """
    cov = _covariance_draws(draws, level)
    diag = np.diagonal(cov, axis1=1, axis2=2)
    ok = np.all(diag > 0, axis=1)
    if not ok.all():
        log.warning("skipping %d draw(s) with a zero variance on the diagonal", int((~ok).sum()))
    cov, diag = cov[ok], diag[ok]
    if len(cov) == 0:
        raise ValueError("no usable draws")
    sd = np.sqrt(diag)
    corr = cov / (sd[:, :, None] * sd[:, None, :])
    corr = np.clip(corr, -1.0, 1.0)
    K = corr.shape[-1]
    corr[:, np.arange(K), np.arange(K)] = 1.0
    a = (1.0 - credible) / 2.0
    lower, upper = np.quantile(corr, [a, 1.0 - a], axis=0)
    relevant = (lower > 0) | (upper < 0)
    np.fill_diagonal(relevant, False)
    return CorrelationReport(corr.mean(axis=0), lower, upper, relevant, len(corr))


@dataclass
class PCAResult:
    loadings: np.ndarray         # (K, c)
    scores: np.ndarray           # (M, c)
    explained: np.ndarray        # (c,), share of total variance
    center: np.ndarray           # (K,)
    scale: np.ndarray            # (K,)


def pca_of_spatial_means(summary, num_components: int, standardize: bool = False) -> PCAResult:
    """PCA of the (M, K) matrix of posterior-mean areal effects.

    Columns are centred (and optionally scaled to unit variance).  Each
    component's largest-magnitude loading is made positive.
    """
    x = summary.theta_mean if isinstance(summary, ArealSummary) else np.asarray(summary, dtype=float)
    M, K = x.shape
    if M < 2:
        raise ValueError("PCA needs at least two areas")
    if not 1 <= num_components <= K:
        raise ValueError(f"num_components must be in 1..{K}")
    center = x.mean(axis=0)
    scale = x.std(axis=0, ddof=1) if standardize else np.ones(K)
    scale = np.where(scale > 0, scale, 1.0)
    xc = (x - center) / scale
    u, s, vt = np.linalg.svd(xc, full_matrices=False)
    var = s**2
    total = var.sum()
    explained = var / total if total > 0 else np.zeros_like(var)
    loadings = vt.T[:, :num_components].copy()
    scores = (u * s)[:, :num_components].copy()
    for c in range(num_components):
        j = np.argmax(np.abs(loadings[:, c]))
        if loadings[j, c] < 0:
            loadings[:, c] *= -1
            scores[:, c] *= -1
    return PCAResult(loadings, scores, explained[:num_components], center, scale)


# ----------------------------------------------------------------------------
# posterior predictive aggregation


def _draw_eta(draws: PosteriorDraws, data: SurveyDataset, s: int, psi=None) -> np.ndarray:
    theta = draws.flat("theta")[s]
    eta = theta[data.area_index]
    if "alpha" in draws.params:
        eta = eta + draws.flat("alpha")[s][data.cell_index]
    if psi is not None:
        eta = eta + psi
    return eta


@dataclass
class PredictiveReport:
    areas: np.ndarray            # (A,) area indices (0-based)
    mean: np.ndarray             # (A, K, J) percentages
    lower: np.ndarray
    upper: np.ndarray
    observed: np.ndarray         # (A, K, J) observed percentages
    draws: np.ndarray            # (S, A, K, J) predicted percentages per draw

    @property
    def covered(self) -> np.ndarray:
        return (self.observed >= self.lower) & (self.observed <= self.upper)

    def rows(self, model: str = ""):
        A, K, J = self.mean.shape
        for a in range(A):
            for k in range(K):
                for j in range(J):
                    yield {
                        "model": model,
                        "area": int(self.areas[a]) + 1,
                        "variable": k + 1,
                        "category": j + 1,
                        "pred_mean": float(self.mean[a, k, j]),
                        "pred_q025": float(self.lower[a, k, j]),
                        "pred_q975": float(self.upper[a, k, j]),
                        "observed": float(self.observed[a, k, j]),
                        "covered": bool(self.covered[a, k, j]),
                    }


def posterior_predictive_areal(draws: PosteriorDraws, data: SurveyDataset, area_filter=None,
                               seed=None, level: float = 0.95) -> PredictiveReport:
    """Replicate every observed answer once per draw and aggregate by area.

    Percentages are over the respondents in the area who answered item k,
    matching the observed-percentage denominator.
    """
    spec = draws.spec
    rng = np.random.default_rng(seed)
    J, K = spec.num_categories, spec.num_variables
    areas = np.arange(spec.num_areas) if area_filter is None else np.unique(np.asarray(area_filter, dtype=int))
    keep = np.isin(data.area_index, areas)
    if not keep.any():
        raise ValueError("no respondents in the requested areas")
    local = np.searchsorted(areas, data.area_index[keep])
    A = len(areas)
    y = data.responses[keep]
    observed_mask = y != MISSING
    group = spec.cut_group(data.cell_index[keep])
    psi_all = draws.psi()
    kappa_all = draws.flat("kappa")

    denom = np.zeros((A, K))
    np.add.at(denom, (np.repeat(local, K), np.tile(np.arange(K), len(local))), observed_mask.ravel())
    if np.any(denom == 0):
        empty = areas[np.any(denom == 0, axis=1)]
        log.warning("areas %s have an item with no answers; their percentages are NaN", empty[:10].tolist())

    base = (local[:, None] * K + np.arange(K)[None, :]) * J
    obs_counts = np.bincount((base + y - 1)[observed_mask], minlength=A * K * J).reshape(A, K, J)
    with np.errstate(invalid="ignore", divide="ignore"):
        observed_pct = 100.0 * obs_counts / denom[:, :, None]

    S = draws.total_draws
    out = np.empty((S, A, K, J))
    for s in range(S):
        psi = psi_all[s] if psi_all is not None else None
        eta = _draw_eta(draws, data, s, psi)[keep]
        probs = category_probs(eta, kappa_all[s][group])            # (n, K, J)
        cum = np.cumsum(probs, axis=-1)
        u = rng.random(eta.shape + (1,))
        sim = np.minimum((u > cum).sum(axis=-1), J - 1)               # 0-based category
        counts = np.bincount((base + sim)[observed_mask], minlength=A * K * J).reshape(A, K, J)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[s] = 100.0 * counts / denom[:, :, None]
    a = (1.0 - level) / 2.0
    lower, upper = np.quantile(out, [a, 1.0 - a], axis=0)
    return PredictiveReport(areas, out.mean(axis=0), lower, upper, observed_pct, out)


# ----------------------------------------------------------------------------
# post-stratification


@dataclass
class PoststratReport:
    """Expected category proportions per (area, item, category)."""

    mean: np.ndarray         # (M, K, J)
    lower: np.ndarray
    upper: np.ndarray
    draws: np.ndarray        # (S, M, K, J)
    label: str = "expected proportions"


def _weights(population_counts, shape):
    n_zm = np.asarray(population_counts, dtype=float)
    if n_zm.shape != shape:
        raise ValueError(f"population counts must have shape {shape}, got {n_zm.shape}")
    if np.any(n_zm < 0):
        raise ValueError("population counts must be non-negative")
    totals = n_zm.sum(axis=0)
    if np.any(totals <= 0):
        raise ValueError(f"areas with zero population: {np.flatnonzero(totals <= 0).tolist()}")
    return n_zm / totals


def _summarize(est, level):
    a = (1.0 - level) / 2.0
    lower, upper = np.quantile(est, [a, 1.0 - a], axis=0)
    return PoststratReport(est.mean(axis=0), lower, upper, est)


def poststratify_probs(cell_probs, population_counts, level: float = 0.95) -> PoststratReport:
    """Weight per-draw cell probabilities (S, Z, M, K, J) by counts N_zm (Z, M)."""
    p = np.asarray(cell_probs, dtype=float)
    w = _weights(population_counts, p.shape[1:3])
    return _summarize(np.einsum("zm,szmkj->smkj", w, p), level)


def cell_probabilities(draws: PosteriorDraws, s: int, quadrature_nodes: int = 20) -> np.ndarray:
    """pi_jk(z, m) for pooled draw ``s``, shape (Z, M, K, J).

    With individual effects the probabilities are averaged over
    psi_k ~ N(0, Sigma_b_tilde[k, k]) by Gauss-Hermite quadrature.
    """
    spec = draws.spec
    Z = spec.num_cells
    theta = draws.flat("theta")[s]                                                  # (M, K)
    eta = np.broadcast_to(theta, (Z,) + theta.shape).copy()
    if "alpha" in draws.params:
        eta += draws.flat("alpha")[s][:, None, :]
    kappa = draws.flat("kappa")[s][spec.cut_group(np.arange(Z))][:, None]              # (Z, 1, K, J-1)
    if "Sigma_b_tilde" not in draws.params:
        return category_probs(eta, kappa)
    nodes, weights = np.polynomial.hermite_e.hermegauss(quadrature_nodes)
    weights = weights / weights.sum()
    sd = np.sqrt(np.diag(draws.flat("Sigma_b_tilde")[s]))
    out = np.zeros(eta.shape + (spec.num_categories,))
    for x, w in zip(nodes, weights):
        out += w * category_probs(eta + x * sd, kappa)
    return out


def poststratify(draws: PosteriorDraws, population_counts, level: float = 0.95) -> PoststratReport:
    spec = draws.spec
    w = _weights(population_counts, (spec.num_cells, spec.num_areas))
    est = np.stack([
        np.einsum("zm,zmkj->mkj", w, cell_probabilities(draws, s)) for s in range(draws.total_draws)
    ])
    return _summarize(est, level)
