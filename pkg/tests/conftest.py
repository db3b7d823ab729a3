import numpy as np
import pytest

from ordinalcar.model import ModelSpec, ParameterState, Variant
from ordinalcar.synth import TrueParameters, generate_dataset, grid_graph, mixing_for_correlation


def make_survey(variant="corr", rows=3, cols=3, K=2, J=4, Z=2, per_area=20, seed=0,
                areal_corr=0.5, indiv_corr=0.8, cutpoint_mode="per_cell"):
    """Small synthetic survey drawn from the model itself."""
    variant = Variant(variant)
    graph = grid_graph(rows, cols)
    M = graph.num_areas
    spec = ModelSpec(variant, J, K, Z, M, cutpoint_mode=cutpoint_mode)
    rng = np.random.default_rng(seed)
    G = spec.num_cut_groups
    delta = rng.dirichlet(np.full(J, 5.0), size=(G, K))
    corr = np.full((K, K), areal_corr) + (1 - areal_corr) * np.eye(K)
    if variant is Variant.INDEP:
        state = ParameterState(delta=delta, phi=None, mixing=np.eye(K), rho=np.full(K, 0.6), sigma=np.full(K, 0.8))
    else:
        state = ParameterState(delta=delta, phi=None, mixing=mixing_for_correlation(corr, np.full(K, 0.8)),
                               rho=np.full(K, 0.6), sigma_M=1.0)
    if variant is Variant.CORR_IRE:
        icorr = np.full((K, K), indiv_corr) + (1 - indiv_corr) * np.eye(K)
        state.ire_mixing = mixing_for_correlation(icorr, np.full(K, 1.0))
        state.sigma_Mtilde = 1.0
    truth = TrueParameters(state, np.full(M, per_area), np.full(Z, 1.0 / Z))
    survey = generate_dataset(truth, spec, graph, seed=rng)
    return spec, graph, survey


@pytest.fixture(scope="session")
def corr_survey():
    return make_survey("corr")


@pytest.fixture(scope="session")
def ire_survey():
    return make_survey("corr_ire")


@pytest.fixture(scope="session")
def indep_survey():
    return make_survey("indep")


# ---------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion at the end of the run

ACCEPTANCE: dict[int, list] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[criterion]
        status = "PASS" if all(ok for ok, _ in checks) else "FAIL"
        detail = "; ".join(d for _, d in checks)
        terminalreporter.write_line(f"criterion {criterion}: {status} -- {detail}")
