import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logit
from scipy.stats import norm, ortho_group

from ordinalcar.model import ModelSpec, SurveyDataset, category_probs
from ordinalcar.posterior import (
    areal_summaries,
    cell_probabilities,
    correlation_report,
    pca_of_spatial_means,
    posterior_predictive_areal,
    poststratify,
    poststratify_probs,
)
from ordinalcar.sampler import PosteriorDraws, SamplerConfig, run_chains


def fake_draws(spec, S, theta=None, kappa=None, mixing=None, ire=None):
    """Archive with one chain of S hand-made draws."""
    M, K, J, G = spec.num_areas, spec.num_variables, spec.num_categories, spec.num_cut_groups
    theta = np.zeros((S, M, K)) if theta is None else theta
    kappa = np.broadcast_to(logit(np.arange(1, J) / J), (S, G, K, J - 1)) if kappa is None else kappa
    mixing = np.broadcast_to(np.eye(K), (S, K, K)) if mixing is None else mixing
    params = {"theta": theta, "kappa": np.array(kappa), "mixing": np.array(mixing),
              "Sigma_b": np.einsum("ski,skj->sij", mixing, mixing)}
    if ire is not None:
        params["ire_phi"], params["ire_mixing"] = ire
        params["Sigma_b_tilde"] = np.einsum("ski,skj->sij", ire[1], ire[1])
    params = {k: v[None] for k, v in params.items()}
    return PosteriorDraws(spec, SamplerConfig(num_chains=1, iterations_per_chain=S, burn_in=0, thin=1),
                          params, np.zeros((1, S, 1)), np.zeros((1, 2), int))


# ------------------------------------------------------------ areal summary

def test_zero_draws():
    s = areal_summaries(np.zeros((10, 3, 2)))
    assert np.all(s.theta_mean == 0) and np.all(s.relevance == 0)


def test_alternating_draws():
    s = areal_summaries(np.tile([1.0, -1.0], 50)[:, None, None])
    assert s.theta_mean[0, 0] == 0 and s.relevance[0, 0] == 0.5


def test_normal_relevance():
    x = np.random.default_rng(0).normal(-1, 1, size=(1000, 1, 1))
    assert abs(areal_summaries(x).relevance[0, 0] - norm.cdf(1)) <= 0.03


def test_relevance_flags():
    s = areal_summaries(np.array([[[-1.0, 1.0, -1.0]]] * 9 + [[[1.0, 1.0, 1.0]]]))
    assert s.relevant().tolist() == [[1, -1, 1]]
    assert s.relevant(high=0.95).tolist() == [[0, -1, 0]]


def test_empty_archive():
    with pytest.raises(ValueError):
        areal_summaries(np.zeros((0, 2, 2)))


# ------------------------------------------------------------- correlations

def test_identity_mixing_correlations():
    spec = ModelSpec("corr", 3, 3, 1, 2)
    r = correlation_report(fake_draws(spec, 5))
    np.testing.assert_allclose(r.mean, np.eye(3), atol=1e-15)
    assert not r.relevant.any()


def test_colinear_columns():
    m = np.array([[1.0, 1.0, 0.0], [0.5, 0.5, 1.0], [0.0, 0.0, 1.0]])
    r = correlation_report(np.broadcast_to(m.T @ m, (4, 3, 3)))
    assert r.mean[0, 1] == pytest.approx(1.0)


def test_two_by_two_product():
    m = np.array([[1.0, 1.0], [0.0, 1.0]])
    r = correlation_report(np.broadcast_to(m.T @ m, (3, 2, 2)))
    assert r.mean[0, 1] == pytest.approx(1 / np.sqrt(2), abs=1e-12)


def test_correlation_invariants_and_rotation():
    rng = np.random.default_rng(1)
    spec = ModelSpec("corr", 3, 3, 1, 2)
    mix = rng.normal(size=(200, 3, 3)) + 2 * np.eye(3)
    rot = np.stack([ortho_group.rvs(3, random_state=i) for i in range(200)])
    a = correlation_report(fake_draws(spec, 200, mixing=mix))
    b = correlation_report(fake_draws(spec, 200, mixing=np.einsum("sij,sjk->sik", rot, mix)))
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
    np.testing.assert_allclose(a.lower, b.lower, atol=1e-12)
    np.testing.assert_allclose(a.mean, a.mean.T)
    np.testing.assert_allclose(np.diag(a.mean), 1.0)
    assert np.all((a.lower <= a.mean + 1e-12) & (a.mean <= a.upper + 1e-12))
    assert np.all(np.abs(a.mean) <= 1)


def test_level_checks():
    spec = ModelSpec("corr", 3, 2, 1, 2)
    with pytest.raises(ValueError):
        correlation_report(fake_draws(spec, 3), level="individual")
    with pytest.raises(ValueError):
        correlation_report(fake_draws(spec, 3), level="cosmic")


# ---------------------------------------------------------------------- PCA

def test_pca_rank_one():
    x = np.outer(np.arange(6.0), [1.0, 2.0])
    assert pca_of_spatial_means(x, 2).explained[0] == pytest.approx(1.0, abs=1e-10)


def test_pca_equal_shares():
    x = np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1]])
    np.testing.assert_allclose(pca_of_spatial_means(x, 2).explained, [0.5, 0.5], atol=1e-12)


def test_pca_worked_case():
    x = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
    np.testing.assert_allclose(pca_of_spatial_means(x, 2).explained, [0.75, 0.25], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), standardize=st.booleans())
def test_pca_reconstruction(seed, standardize):
    x = np.random.default_rng(seed).normal(size=(12, 4))
    r = pca_of_spatial_means(x, 4, standardize)
    np.testing.assert_allclose(r.scores @ r.loadings.T, (x - r.center) / r.scale, atol=1e-8)
    assert np.all(r.loadings[np.argmax(np.abs(r.loadings), axis=0), range(4)] > 0)


def test_pca_argument_checks():
    with pytest.raises(ValueError):
        pca_of_spatial_means(np.zeros((1, 2)), 1)
    with pytest.raises(ValueError):
        pca_of_spatial_means(np.zeros((5, 2)), 3)


# ------------------------------------------------------------ predictive

def test_predictive_degenerate():
    spec = ModelSpec("corr", 4, 2, 1, 2)
    data = SurveyDataset(np.ones((6, 2), int), np.zeros(6, int), [0, 0, 0, 1, 1, 1], 4, 1, 2)
    theta = np.full((20, 2, 2), 60.0)                 # all mass on category 1
    r = posterior_predictive_areal(fake_draws(spec, 20, theta=theta), data, seed=0)
    np.testing.assert_allclose(r.mean[..., 0], 100.0)
    np.testing.assert_allclose(r.upper - r.lower, 0.0)
    assert r.covered.all()


@pytest.fixture(scope="module")
def fitted(corr_survey):
    spec, graph, survey = corr_survey
    return run_chains(spec, survey.data, graph, SamplerConfig(num_chains=2, iterations_per_chain=400, burn_in=200, thin=10))


def test_predictive_percentages_sum(corr_survey, fitted):
    data = corr_survey[2].data
    r = posterior_predictive_areal(fitted, data, seed=1)
    np.testing.assert_allclose(r.draws.sum(axis=-1), 100.0, atol=1e-9)
    np.testing.assert_allclose(r.observed.sum(axis=-1), 100.0, atol=1e-9)
    assert r.draws.shape == (40, 9, 2, 4)


def test_predictive_area_filter(corr_survey, fitted):
    data = corr_survey[2].data
    r = posterior_predictive_areal(fitted, data, area_filter=[4], seed=1)
    rows = list(r.rows("corr"))
    assert {row["area"] for row in rows} == {5}
    assert len(rows) == 2 * 4
    for k in (1, 2):
        assert sum(row["pred_mean"] for row in rows if row["variable"] == k) == pytest.approx(100.0, abs=1e-9)


def test_predictive_reproducible(corr_survey, fitted):
    data = corr_survey[2].data
    a = posterior_predictive_areal(fitted, data, seed=5)
    b = posterior_predictive_areal(fitted, data, seed=5)
    np.testing.assert_array_equal(a.draws, b.draws)


# ------------------------------------------------------- post-stratification

def test_poststrat_single_cell():
    p = np.random.default_rng(0).dirichlet(np.ones(3), size=(7, 1, 2, 1))
    r = poststratify_probs(p, np.array([[5.0, 9.0]]))
    np.testing.assert_allclose(r.draws, p[:, 0])


def test_poststrat_midpoint():
    p = np.zeros((1, 2, 1, 1, 2))
    p[0, 0, 0, 0] = [0.2, 0.8]
    p[0, 1, 0, 0] = [0.4, 0.6]
    r = poststratify_probs(p, np.array([[3.0], [3.0]]))
    np.testing.assert_allclose(r.mean[0, 0], [0.3, 0.7])


def test_poststrat_uniform():
    spec = ModelSpec("corr", 4, 2, 3, 2)
    r = poststratify(fake_draws(spec, 4), np.ones((3, 2)))
    np.testing.assert_allclose(r.mean, 0.25, atol=1e-15)
    assert r.label == "expected proportions"


def test_poststrat_equal_counts_is_average():
    p = np.random.default_rng(2).dirichlet(np.ones(4), size=(5, 3, 2, 2))
    r = poststratify_probs(p, np.full((3, 2), 7.0))
    np.testing.assert_allclose(r.draws, p.mean(axis=1), atol=1e-12)


def test_poststrat_checks():
    p = np.full((1, 2, 1, 1, 2), 0.5)
    with pytest.raises(ValueError):
        poststratify_probs(p, np.zeros((2, 1)))
    with pytest.raises(ValueError):
        poststratify_probs(p, np.array([[1.0], [-1.0]]))
    with pytest.raises(ValueError):
        poststratify_probs(p, np.ones((3, 1)))


def test_cell_probabilities_marginalise_individual_effects():
    spec = ModelSpec("corr_ire", 4, 1, 1, 1)
    ire_mixing = np.full((1, 1, 1), 1.5)
    d = fake_draws(spec, 1, theta=np.full((1, 1, 1), 0.3), ire=(np.zeros((1, 1, 1)), ire_mixing))
    p = cell_probabilities(d, 0, quadrature_nodes=40)
    z = np.random.default_rng(3).standard_normal(400_000) * 1.5
    mc = category_probs(0.3 + z, logit([0.25, 0.5, 0.75])).mean(axis=0)
    np.testing.assert_allclose(p[0, 0, 0], mc, atol=3e-3)
    assert p.sum(axis=-1) == pytest.approx(1.0)
