"""Convergence diagnostics and WAIC.

Gates follow the usual protocol: a functional passes when split R-hat is at
most 1.10 and the effective sample size is at least 100.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import Variant
from .sampler import PosteriorDraws

RHAT_MAX = 1.10
ESS_MIN = 100.0


class DiagnosticsError(ValueError):
    pass


def _as_trace(trace) -> np.ndarray:
    x = np.asarray(trace, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DiagnosticsError("trace must be (chains, draws)")
    if not np.all(np.isfinite(x)):
        raise DiagnosticsError("trace contains non-finite values")
    return x


def gelman_rubin(trace) -> float:
    """Split potential scale reduction factor.

    Each chain is cut in half (dropping the middle draw of odd-length
    chains) and the classic between/within ratio is computed on the halves.
    Ratios below one, which only arise from the (n-1)/n finite-sample
    factor, are reported as 1.  Zero within-chain variance gives +inf when
    the half-chain means differ and 1 when they agree.
    """
    x = _as_trace(trace)
    m, n = x.shape
    if m < 2 or n < 10:
        raise DiagnosticsError("R-hat needs at least 2 chains of 10 draws")
    half = n // 2
    split = np.vstack([x[:, :half], x[:, n - half:]])
    means = split.mean(axis=1)
    w = split.var(axis=1, ddof=1).mean()
    b = half * means.var(ddof=1)
    scale = max(abs(float(means.mean())), float(np.abs(split).max()), 1.0)
    if w <= (1e-14 * scale) ** 2:
        return 1.0 if b <= (1e-12 * scale) ** 2 * half else math.inf
    var_plus = (half - 1) / half * w + b / half
    return float(math.sqrt(max(var_plus / w, 1.0)))


def _autocorrelation(x: np.ndarray) -> np.ndarray:
    n = len(x)
    centered = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n] / n
    return acov / acov[0]


def _chain_ess(x: np.ndarray) -> float:
    n = len(x)
    rho = _autocorrelation(x)
    # Geyer: sum adjacent pairs while positive, enforcing monotone decrease
    tau = -1.0
    prev = math.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        tau += 2.0 * pair
        prev = pair
    # antithetic chains give tau < 1; report at most the nominal draw count
    return n / max(tau, 1.0)


def effective_sample_size(trace) -> float:
    """Initial monotone sequence ESS per chain, summed over chains.

    Each chain contributes at most its number of draws.

    A trace with no variation in any chain returns NaN (autocorrelation is
    undefined).
    """
    x = _as_trace(trace)
    if x.shape[1] < 4:
        raise DiagnosticsError("ESS needs at least 4 draws per chain")
    total = 0.0
    any_var = False
    for chain in x:
        if np.ptp(chain) == 0:
            continue
        any_var = True
        total += _chain_ess(chain)
    return total if any_var else math.nan


@dataclass(frozen=True)
class WAICResult:
    waic: float
    lppd: float
    p_waic: float
    n_obs: int

    def to_dict(self) -> dict:
        return {"waic": self.waic, "lppd": self.lppd, "p_waic": self.p_waic, "n_obs": self.n_obs}


def waic(loglik_matrix) -> WAICResult:
    """WAIC from a (draws, observations) matrix of pointwise log-likelihoods."""
    ll = np.asarray(loglik_matrix, dtype=float)
    if ll.ndim != 2:
        raise DiagnosticsError("loglik matrix must be (draws, observations)")
    s = ll.shape[0]
    if s < 2:
        raise DiagnosticsError("WAIC needs at least two draws")
    if not np.all(np.isfinite(ll)):
        raise DiagnosticsError("loglik matrix has non-finite entries")
    lppd = float(np.sum(logsumexp(ll, axis=0) - np.log(s)))
    p_waic = float(np.sum(np.var(ll, axis=0, ddof=1)))
    return WAICResult(waic=-2.0 * (lppd - p_waic), lppd=lppd, p_waic=p_waic, n_obs=ll.shape[1])


# ----------------------------------------------------------------------------
# monitored functionals


def identifiable_functionals(draws: PosteriorDraws) -> dict[str, np.ndarray]:
    """Named (chains, draws) traces of the identifiable quantities.

    Cut points, Sigma_b and Sigma_b_tilde (upper triangle), every theta_mk,
    and the scale parameters.  rho_k is monitored only for the independent
    variant: in the mixed variants it labels a column of the
    rotation-unidentified Phi.
    """
    spec = draws.spec
    p = draws.params
    out: dict[str, np.ndarray] = {}

    def add(prefix, arr):
        c, d = arr.shape[:2]
        flat = arr.reshape(c, d, -1)
        for idx in np.ndindex(arr.shape[2:]):
            j = np.ravel_multi_index(idx, arr.shape[2:]) if arr.ndim > 2 else 0
            label = prefix + ("[" + ",".join(str(i + 1) for i in idx) + "]" if idx else "")
            out[label] = flat[:, :, j]

    add("kappa", p["kappa"])
    add("theta", p["theta"])
    if spec.variant is Variant.INDEP:
        add("rho", p["rho"])
        add("sigma", p["sigma"])
    else:
        add("sigma_M", p["sigma_M"])
        _add_upper(out, "Sigma_b", p["Sigma_b"])
    if "alpha" in p:
        add("alpha", p["alpha"][:, :, 1:])
    if spec.has_ire:
        add("sigma_Mtilde", p["sigma_Mtilde"])
        _add_upper(out, "Sigma_b_tilde", p["Sigma_b_tilde"])
    return out


def _add_upper(out, prefix, arr):
    K = arr.shape[-1]
    for k in range(K):
        for l in range(k, K):
            out[f"{prefix}[{k + 1},{l + 1}]"] = arr[:, :, k, l]


@dataclass(frozen=True)
class DiagnosticRow:
    functional: str
    rhat: float          # NaN for single-chain archives
    ess: float
    passed: bool


def convergence_report(draws: PosteriorDraws, rhat_max: float = RHAT_MAX, ess_min: float = ESS_MIN) -> list[DiagnosticRow]:
    rows = []
    for name, trace in identifiable_functionals(draws).items():
        ess = effective_sample_size(trace)
        rhat = gelman_rubin(trace) if trace.shape[0] >= 2 else math.nan
        rhat_ok = math.isnan(rhat) or rhat <= rhat_max
        rows.append(DiagnosticRow(name, rhat, ess, bool(rhat_ok and ess >= ess_min)))
    return rows


def gate_passes(rows: list[DiagnosticRow]) -> bool:
    return all(r.passed for r in rows)
