"""Adaptive random-walk Metropolis-within-Gibbs over :class:`ParameterState`.

One sweep updates, in order: cut-point simplexes (additive log-ratio block
moves), cell effects, Phi site by site, the mixing matrix entry by entry,
the LCAR autocorrelations (logit scale), the scale parameters (log scale),
the individual effects row by row and their mixing matrix, and finally
re-centres Phi with the likelihood-preserving cut-point compensation.

Proposal scales follow a Robbins-Monro recursion on the log scale during
burn-in and are frozen afterwards.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels as kern
from .graph import AdjacencyGraph
from .model import (
    MISSING,
    CutpointMode,
    ModelSpec,
    ParameterState,
    SurveyDataset,
    Variant,
    center_state,
    logposterior,
)

log = logging.getLogger(__name__)

_VARIANT_CODE = {Variant.INDEP: 0, Variant.CORR: 1, Variant.CORR_IRE: 2}
_INITIAL_LOG_SCALE = np.log(0.2)


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    num_chains: int = 5
    iterations_per_chain: int = 8000
    burn_in: int = 2000
    thin: int = 30
    seed: int = 0
    target_acceptance: float = 0.44
    adapt_during_burnin_only: bool = True
    # update groups held at their initial value, e.g. ("sigma_M",)
    frozen: tuple[str, ...] = ()
    max_workers: int = 1

    def __post_init__(self):
        if self.num_chains < 1 or self.iterations_per_chain < 1 or self.thin < 1:
            raise ValueError("num_chains, iterations_per_chain and thin must be positive")
        if not 0 <= self.burn_in < self.iterations_per_chain:
            raise ValueError("burn_in must be in [0, iterations_per_chain)")
        if not 0 < self.target_acceptance < 1:
            raise ValueError("target_acceptance must lie in (0, 1)")
        unknown = set(self.frozen) - set(kern.GROUP_NAMES)
        if unknown:
            raise ValueError(f"unknown update groups: {sorted(unknown)}")
        object.__setattr__(self, "frozen", tuple(self.frozen))

    @property
    def draws_per_chain(self) -> int:
        return (self.iterations_per_chain - self.burn_in) // self.thin

    @property
    def total_draws(self) -> int:
        return self.num_chains * self.draws_per_chain

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frozen"] = list(self.frozen)
        return d


def chain_seed_sequence(seed: int, chain_id: int) -> np.random.SeedSequence:
    """Independent stream per chain; does not depend on the number of chains."""
    return np.random.SeedSequence(int(seed), spawn_key=(int(chain_id),))


# ----------------------------------------------------------------------------
# initialisation


def _empirical_simplex(responses, J, pseudo=0.5):
    obs = responses[responses != MISSING]
    if obs.size == 0:
        return np.full(J, 1.0 / J)
    counts = np.bincount(obs, minlength=J + 1)[1:].astype(float)
    return (counts + pseudo) / (counts.sum() + pseudo * J)


def initial_cutpoint_simplexes(spec: ModelSpec, data: SurveyDataset, sparse_cell: int | None = None) -> np.ndarray:
    """Empirical category frequencies per item (and per cell when cut points are per cell).

    Cells with fewer than ``sparse_cell`` answers (default ``10 * J``) are
    averaged half-and-half with the item-wide frequencies.  Items with no
    answers at all get the uniform simplex.
    """
    J, K = spec.num_categories, spec.num_variables
    sparse_cell = 10 * J if sparse_cell is None else sparse_cell
    delta = np.empty((spec.num_cut_groups, K, J))
    for k in range(K):
        col = data.responses[:, k]
        overall = _empirical_simplex(col, J)
        if (col != MISSING).sum() == 0:
            delta[:, k] = 1.0 / J
            continue
        if spec.cutpoint_mode is CutpointMode.SHARED:
            delta[0, k] = overall
            continue
        for z in range(spec.num_cells):
            in_cell = col[data.cell_index == z]
            local = _empirical_simplex(in_cell, J)
            if (in_cell != MISSING).sum() < sparse_cell:
                local = 0.5 * local + 0.5 * overall
            delta[z, k] = local
    return delta


def initialize_state(spec: ModelSpec, data: SurveyDataset, graph: AdjacencyGraph, rng) -> ParameterState:
    rng = np.random.default_rng(rng)
    K = spec.num_variables
    n = data.num_respondents
    state = ParameterState(
        delta=initial_cutpoint_simplexes(spec, data),
        phi=rng.normal(0.0, 0.1, size=(spec.num_areas, K)),
        mixing=np.eye(K) if spec.variant is Variant.INDEP else 0.1 * np.eye(K),
        rho=np.full(K, 0.5),
    )
    if spec.include_alpha:
        state.alpha = np.zeros((spec.num_cells, K))
    if spec.variant is Variant.INDEP:
        state.sigma = np.ones(K)
    else:
        state.sigma_M = 1.0
    if spec.has_ire:
        state.ire_phi = rng.normal(0.0, 0.1, size=(n, K))
        state.ire_mixing = 0.1 * np.eye(K)
        state.sigma_Mtilde = 1.0
    return center_state(state, data.area_sample_sizes)


# ----------------------------------------------------------------------------
# array plumbing between ParameterState and the compiled kernels


def _csr_groups(labels, num_groups):
    order = np.argsort(labels, kind="stable").astype(np.int64)
    ptr = np.concatenate([[0], np.cumsum(np.bincount(labels, minlength=num_groups))]).astype(np.int64)
    return ptr, order


def _kernel_data(spec: ModelSpec, data: SurveyDataset):
    group = spec.cut_group(data.cell_index).astype(np.int64)
    area_ptr, area_resp = _csr_groups(data.area_index, spec.num_areas)
    grp_ptr, grp_resp = _csr_groups(group, spec.num_cut_groups)
    cell_ptr, cell_resp = _csr_groups(data.cell_index, spec.num_cells)
    return (
        np.ascontiguousarray(data.responses, dtype=np.int64),
        np.ascontiguousarray(data.cell_index, dtype=np.int64),
        np.ascontiguousarray(data.area_index, dtype=np.int64),
        group,
        area_ptr, area_resp, grp_ptr, grp_resp, cell_ptr, cell_resp,
        data.area_sample_sizes.astype(float),
    )


def _kernel_graph(graph: AdjacencyGraph):
    return (
        graph.nb_ptr.astype(np.int64),
        graph.nb_idx.astype(np.int64),
        graph.degrees.astype(float),
        graph.laplacian_eigenvalues.astype(float),
    )


def _kernel_state(state: ParameterState, spec: ModelSpec, n: int):
    K = spec.num_variables
    alpha = state.alpha if state.alpha is not None else np.zeros((spec.num_cells, K))
    sigma = state.sigma if state.sigma is not None else np.ones(K)
    scal = np.array([
        state.sigma_M if state.sigma_M is not None else 1.0,
        state.sigma_Mtilde if state.sigma_Mtilde is not None else 1.0,
    ])
    iphi = state.ire_phi if state.ire_phi is not None else np.zeros((n, K))
    imix = state.ire_mixing if state.ire_mixing is not None else np.zeros((K, K))
    arrays = [
        state.delta, state.kappa, alpha, state.phi, state.mixing, state.phi @ state.mixing,
        state.rho, sigma, scal, iphi, imix, iphi @ imix,
    ]
    return tuple(np.ascontiguousarray(a, dtype=float).copy() for a in arrays) + (np.zeros((n, K)),)


def _refresh_eta(st, data_t):
    area, cell = data_t[2], data_t[1]
    eta = st[12]
    eta[:] = st[5][area] + st[2][cell] + st[11]


def _state_from_kernel(st, spec: ModelSpec) -> ParameterState:
    state = ParameterState(
        delta=st[0].copy(), phi=st[3].copy(), mixing=st[4].copy(), rho=st[6].copy(),
    )
    if spec.include_alpha:
        state.alpha = st[2].copy()
    if spec.variant is Variant.INDEP:
        state.sigma = st[7].copy()
    else:
        state.sigma_M = float(st[8][0])
    if spec.has_ire:
        state.ire_phi = st[9].copy()
        state.ire_mixing = st[10].copy()
        state.sigma_Mtilde = float(st[8][1])
    return state


def _initial_log_scales(spec: ModelSpec, n: int):
    K, Z, M, G = spec.num_variables, spec.num_cells, spec.num_areas, spec.num_cut_groups
    shapes = [(G, K), (Z, K), (M, K), (K, K), (K,), (K,), (1,), (max(n, 1),), (K, K), (1,)]
    return tuple(np.full(s, _INITIAL_LOG_SCALE) for s in shapes)


# ----------------------------------------------------------------------------
# draws


PARAMETER_NAMES = (
    "delta", "kappa", "alpha", "phi", "mixing", "theta", "rho", "sigma",
    "sigma_M", "Sigma_b", "ire_phi", "ire_mixing", "sigma_Mtilde", "Sigma_b_tilde",
)


def _snapshot(st, spec: ModelSpec) -> dict[str, np.ndarray]:
    out = {
        "delta": st[0].copy(),
        "kappa": st[1].copy(),
        "phi": st[3].copy(),
        "mixing": st[4].copy(),
        "theta": st[5].copy(),
        "rho": st[6].copy(),
        "Sigma_b": st[4].T @ st[4],
    }
    if spec.include_alpha:
        out["alpha"] = st[2].copy()
    if spec.variant is Variant.INDEP:
        out["sigma"] = st[7].copy()
    else:
        out["sigma_M"] = np.array(st[8][0])
    if spec.has_ire:
        out["ire_phi"] = st[9].copy()
        out["ire_mixing"] = st[10].copy()
        out["sigma_Mtilde"] = np.array(st[8][1])
        out["Sigma_b_tilde"] = st[10].T @ st[10]
    return out


@dataclass
class ChainResult:
    chain_id: int
    params: dict[str, np.ndarray]          # name -> (D, ...)
    loglik: np.ndarray                      # (D, n_obs)
    acceptance: dict[str, float]            # post burn-in acceptance rate per group
    log_scales_end_of_burnin: tuple
    log_scales_final: tuple
    seconds: float = 0.0


@dataclass
class PosteriorDraws:
    """Thinned multi-chain archive.

    ``params[name]`` has shape (num_chains, draws_per_chain, ...).  The
    log-likelihood matrix has one column per observed (respondent, item)
    pair, in row-major order of ``obs_index``.
    """

    spec: ModelSpec
    config: SamplerConfig
    params: dict[str, np.ndarray]
    loglik: np.ndarray
    obs_index: np.ndarray
    acceptance: list[dict[str, float]] = field(default_factory=list)
    area_sample_sizes: np.ndarray | None = None

    @property
    def num_chains(self) -> int:
        return self.loglik.shape[0]

    @property
    def draws_per_chain(self) -> int:
        return self.loglik.shape[1]

    @property
    def total_draws(self) -> int:
        return self.num_chains * self.draws_per_chain

    def flat(self, name: str) -> np.ndarray:
        """Parameter draws with chains pooled: shape (total_draws, ...)."""
        a = self.params[name]
        return a.reshape((-1,) + a.shape[2:])

    @property
    def loglik_matrix(self) -> np.ndarray:
        return self.loglik.reshape(-1, self.loglik.shape[-1])

    def state(self, chain: int, draw: int) -> ParameterState:
        p = {k: v[chain, draw] for k, v in self.params.items()}
        state = ParameterState(delta=p["delta"].copy(), phi=p["phi"].copy(),
                               mixing=p["mixing"].copy(), rho=p["rho"].copy())
        if "alpha" in p:
            state.alpha = p["alpha"].copy()
        if "sigma" in p:
            state.sigma = p["sigma"].copy()
        if "sigma_M" in p:
            state.sigma_M = float(p["sigma_M"])
        if "ire_phi" in p:
            state.ire_phi = p["ire_phi"].copy()
            state.ire_mixing = p["ire_mixing"].copy()
            state.sigma_Mtilde = float(p["sigma_Mtilde"])
        return state

    def psi(self) -> np.ndarray | None:
        """Individual effects Psi per pooled draw, (total_draws, n, K)."""
        if "ire_phi" not in self.params:
            return None
        return np.einsum("dnk,dkl->dnl", self.flat("ire_phi"), self.flat("ire_mixing"))


class _Chain:
    def __init__(self, spec, data, graph, config, chain_id):
        self.spec, self.data, self.graph, self.config = spec, data, graph, config
        self.chain_id = chain_id
        ss = chain_seed_sequence(config.seed, chain_id)
        init_ss, kernel_ss = ss.spawn(2)
        self.rng = np.random.default_rng(init_ss)
        self.kernel_seed = int(kernel_ss.generate_state(1, dtype=np.uint32)[0])
        self.data_t = _kernel_data(spec, data)
        self.graph_t = _kernel_graph(graph)

    def initial(self) -> ParameterState:
        for _attempt in range(100):
            state = initialize_state(self.spec, self.data, self.graph, self.rng)
            if np.isfinite(logposterior(state, self.spec, self.data, self.graph)):
                return state
        raise SamplerError("could not find an initial state with finite log posterior after 100 attempts")

    def run(self, state: ParameterState | None = None) -> ChainResult:
        spec, cfg, data = self.spec, self.config, self.data
        t_start = time.perf_counter()
        state = self.initial() if state is None else state
        n = data.num_respondents
        st = _kernel_state(state, spec, n)
        _refresh_eta(st, self.data_t)
        ls = _initial_log_scales(spec, n)
        acc = np.zeros(kern.NUM_GROUPS)
        att = np.zeros(kern.NUM_GROUPS)
        active = np.array([name not in cfg.frozen for name in kern.GROUP_NAMES])
        burn_in = cfg.burn_in if cfg.adapt_during_burnin_only else cfg.iterations_per_chain
        variant = _VARIANT_CODE[spec.variant]
        kern.seed(self.kernel_seed)

        def advance(t0, count):
            kern.advance(count, t0, burn_in, self.data_t, self.graph_t, st, ls, acc, att,
                         active, variant, spec.include_alpha, cfg.target_acceptance, spec.sigma_upper)

        advance(0, cfg.burn_in)
        scales_burnin = tuple(a.copy() for a in ls)
        acc[:] = 0.0
        att[:] = 0.0

        observed = data.observed
        group = self.data_t[3]
        ll_buf = np.empty((n, spec.num_variables))
        draws: dict[str, list] = {}
        ll_draws = []
        t = cfg.burn_in
        for _ in range(cfg.draws_per_chain):
            advance(t, cfg.thin)
            t += cfg.thin
            for name, value in _snapshot(st, spec).items():
                draws.setdefault(name, []).append(value)
            kern.pointwise_loglik(self.data_t[0], group, st[12], st[1], ll_buf)
            ll_draws.append(ll_buf[observed].copy())
        remaining = cfg.iterations_per_chain - t
        if remaining > 0:
            advance(t, remaining)

        rates = {
            name: float(acc[g] / att[g])
            for g, name in enumerate(kern.GROUP_NAMES)
            if att[g] > 0
        }
        n_obs = int(observed.sum())
        result = ChainResult(
            chain_id=self.chain_id,
            params={k: np.stack(v) for k, v in draws.items()},
            loglik=np.stack(ll_draws) if ll_draws else np.zeros((0, n_obs)),
            acceptance=rates,
            log_scales_end_of_burnin=scales_burnin,
            log_scales_final=tuple(a.copy() for a in ls),
            seconds=time.perf_counter() - t_start,
        )
        log.info("chain %d finished in %.1fs; acceptance %s", self.chain_id, result.seconds,
                 {k: round(v, 3) for k, v in rates.items()})
        return result


def run_chain(spec: ModelSpec, data: SurveyDataset, graph: AdjacencyGraph, config: SamplerConfig,
              chain_id: int, initial_state: ParameterState | None = None) -> ChainResult:
    if not 0 <= chain_id < config.num_chains:
        raise ValueError(f"chain_id {chain_id} outside 0..{config.num_chains - 1}")
    _check_inputs(spec, data, graph)
    return _Chain(spec, data, graph, config, chain_id).run(initial_state)


def _run_one(args):
    return run_chain(*args)


def run_chains(spec: ModelSpec, data: SurveyDataset, graph: AdjacencyGraph, config: SamplerConfig) -> PosteriorDraws:
    _check_inputs(spec, data, graph)
    jobs = [(spec, data, graph, config, c) for c in range(config.num_chains)]
    if config.max_workers > 1 and config.num_chains > 1:
        with ProcessPoolExecutor(max_workers=config.max_workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    return merge_chains(spec, config, data, results)


def merge_chains(spec, config, data, results: list[ChainResult]) -> PosteriorDraws:
    names = results[0].params.keys()
    params = {name: np.stack([r.params[name] for r in results]) for name in names}
    rows, cols = np.nonzero(data.observed)
    _warn_scale_bounds(spec, params)
    return PosteriorDraws(
        spec=spec,
        config=config,
        params=params,
        loglik=np.stack([r.loglik for r in results]),
        obs_index=np.column_stack([rows, cols]),
        acceptance=[r.acceptance for r in results],
        area_sample_sizes=data.area_sample_sizes,
    )


def _warn_scale_bounds(spec, params):
    for name in ("sigma", "sigma_M", "sigma_Mtilde"):
        if name in params and np.mean(params[name] > 0.9 * spec.sigma_upper) > 0.01:
            log.warning("%s has posterior mass near the bound sigma_upper=%g", name, spec.sigma_upper)


def _check_inputs(spec: ModelSpec, data: SurveyDataset, graph: AdjacencyGraph) -> None:
    if graph.num_areas != spec.num_areas:
        raise ValueError("graph and model disagree on the number of areas")
    if (data.num_variables, data.num_categories, data.num_cells, data.num_areas) != (
        spec.num_variables, spec.num_categories, spec.num_cells, spec.num_areas,
    ):
        raise ValueError("dataset dimensions do not match the model specification")


__all__ = [
    "SamplerConfig", "SamplerError", "ChainResult", "PosteriorDraws", "PARAMETER_NAMES",
    "initialize_state", "initial_cutpoint_simplexes", "run_chain", "run_chains", "merge_chains",
    "chain_seed_sequence",
]
