import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from ordinalcar.graph import (
    AdjacencyError,
    from_edges,
    lcar_logdensity,
    lcar_sample,
    load_adjacency,
    write_adjacency,
)
from ordinalcar.synth import grid_graph


def dense_logdensity(theta, rho, sigma2, graph):
    """Reference: explicit precision, explicit determinant, scipy MVN."""
    M = graph.num_areas
    W = np.zeros((M, M))
    for i, nbrs in enumerate(graph.neighbor_lists):
        W[i, list(nbrs)] = 1.0
    Q = (rho * (np.diag(W.sum(axis=1)) - W) + (1 - rho) * np.eye(M)) / sigma2
    return multivariate_normal(np.zeros(M), np.linalg.inv(Q)).logpdf(theta)


def path_graph(n):
    return from_edges(n, [(i, i + 1) for i in range(n - 1)])


def test_two_by_two_grid_spectrum():
    g = from_edges(4, [(0, 1), (0, 2), (1, 3), (2, 3)])
    assert g.degrees.tolist() == [2, 2, 2, 2]
    np.testing.assert_allclose(g.laplacian_eigenvalues, [0, 2, 2, 4], atol=1e-12)


def test_single_node():
    g = from_edges(1, [])
    assert g.degrees.tolist() == [0]
    np.testing.assert_allclose(g.laplacian_eigenvalues, [0.0])


def test_eigenvalues_match_dense_laplacian():
    g = grid_graph(3, 4)
    ref = np.linalg.eigvalsh(g.laplacian().toarray())
    np.testing.assert_allclose(g.laplacian_eigenvalues, np.clip(ref, 0, None), atol=1e-10)


@pytest.mark.parametrize("edges", [[(3, 3)], [(0, 5)], [(-1, 0)]])
def test_invalid_edges_rejected(edges):
    with pytest.raises(AdjacencyError):
        from_edges(4, edges)


def test_self_loop_in_file(tmp_path):
    p = tmp_path / "g.adj"
    p.write_text("0 1\n3 3\n")
    with pytest.raises(AdjacencyError):
        load_adjacency(p)


def test_file_round_trip_with_island(tmp_path, caplog):
    g = from_edges(5, [(0, 1), (1, 2)])          # areas 3 and 4 are islands
    p = tmp_path / "g.adj"
    write_adjacency(g, p)
    with caplog.at_level(logging.WARNING):
        back = load_adjacency(p)
    assert back.neighbor_lists == g.neighbor_lists
    assert back.num_areas == 5


def test_comments_and_duplicates(tmp_path):
    p = tmp_path / "g.adj"
    p.write_text("# header\n0 1  # first edge\n1 0\n\n1 2\n")
    g = load_adjacency(p)
    assert g.num_edges == 2
    assert g.degrees.tolist() == [1, 2, 1]


def test_unparseable_line(tmp_path):
    p = tmp_path / "g.adj"
    p.write_text("0 x\n")
    with pytest.raises(AdjacencyError):
        load_adjacency(p)


def test_quad_laplacian_matches_matrix_form():
    g = grid_graph(3, 3)
    theta = np.random.default_rng(1).normal(size=9)
    L = g.laplacian().toarray()
    assert g.quad_laplacian(theta) == pytest.approx(theta @ L @ theta, abs=1e-12)


def test_components_and_relabel():
    g = from_edges(4, [(0, 1), (2, 3)])
    labels = g.components()
    assert labels[0] == labels[1] != labels[2] == labels[3]
    r = g.relabel(np.array([3, 2, 1, 0]))
    assert r.neighbor_lists == ((1,), (0,), (3,), (2,))


GRAPHS = [grid_graph(2, 2), grid_graph(3, 3), grid_graph(4, 5), path_graph(7), path_graph(20),
          from_edges(2, []), from_edges(4, [(0, 1), (2, 3)])]


@pytest.mark.parametrize("graph", GRAPHS, ids=lambda g: f"M{g.num_areas}E{g.num_edges}")
@pytest.mark.parametrize("rho", [0.01, 0.5, 0.99])
@pytest.mark.parametrize("sigma2", [0.25, 1.0, 4.0])
def test_logdensity_matches_dense_oracle(graph, rho, sigma2):
    theta = np.random.default_rng(graph.num_areas).normal(size=graph.num_areas)
    assert abs(lcar_logdensity(theta, rho, sigma2, graph) - dense_logdensity(theta, rho, sigma2, graph)) <= 1e-8


def test_two_by_two_worked_case():
    g = grid_graph(2, 2)
    theta = np.array([1.0, -1.0, -1.0, 1.0])
    assert lcar_logdensity(theta, 0.5, 1.0, g) == pytest.approx(dense_logdensity(theta, 0.5, 1.0, g), abs=1e-10)


def test_zero_vector_is_normalizing_constant():
    g = grid_graph(3, 3)
    rho, s2 = 0.3, 2.0
    const = -0.5 * 9 * np.log(2 * np.pi * s2) + 0.5 * np.sum(np.log(rho * g.laplacian_eigenvalues + 1 - rho))
    assert lcar_logdensity(np.zeros(9), rho, s2, g) == pytest.approx(const, abs=1e-12)


def test_small_rho_limit_is_iid():
    g = grid_graph(3, 3)
    theta = np.linspace(-1, 1, 9)
    iid = -0.5 * 9 * np.log(2 * np.pi * 4.0) - 0.5 * theta @ theta / 4.0
    assert lcar_logdensity(theta, 1e-12, 4.0, g) == pytest.approx(iid, abs=1e-9)


@pytest.mark.parametrize("rho,sigma2", [(0.0, 1.0), (1.0, 1.0), (1.2, 1.0), (0.5, 0.0), (0.5, -1.0)])
def test_parameter_checks(rho, sigma2):
    with pytest.raises(ValueError):
        lcar_logdensity(np.zeros(4), rho, sigma2, grid_graph(2, 2))


def test_wrong_length():
    with pytest.raises(ValueError):
        lcar_logdensity(np.zeros(3), 0.5, 1.0, grid_graph(2, 2))


@settings(max_examples=60, deadline=None)
@given(rho=st.floats(0.001, 0.999), sigma2=st.floats(0.05, 20.0), seed=st.integers(0, 10_000))
def test_logdensity_property(rho, sigma2, seed):
    g = grid_graph(3, 4)
    theta = np.random.default_rng(seed).normal(size=g.num_areas) * np.sqrt(sigma2)
    assert abs(lcar_logdensity(theta, rho, sigma2, g) - dense_logdensity(theta, rho, sigma2, g)) <= 1e-8


def test_sample_deterministic():
    g = grid_graph(3, 3)
    np.testing.assert_array_equal(lcar_sample(0.5, 1.0, g, 7), lcar_sample(0.5, 1.0, g, 7))


def test_sample_covariance_matches_inverse_precision():
    g = grid_graph(3, 3)
    # 45 correlated entries at 3 SE each carry a ~10% family-wise false alarm
    # rate; the seed is fixed and the aggregate z-mean is checked as well
    rng = np.random.default_rng(4)
    n = 10_000
    x = np.stack([lcar_sample(0.5, 1.0, g, rng) for _ in range(n)])
    cov = np.linalg.inv(g.precision(0.5, 1.0).toarray())
    emp = x.T @ x / n
    # standard error of a sample second moment: sqrt((S_ii S_jj + S_ij^2) / n)
    se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / n)
    assert np.all(np.abs(emp - cov) <= 3 * se)
    z = ((emp - cov) / se)[np.triu_indices(9)]
    assert abs(z.mean()) < 1.0


def test_sample_iid_limit_variance():
    g = grid_graph(3, 3)
    rng = np.random.default_rng(4)
    x = np.stack([lcar_sample(1e-9, 4.0, g, rng) for _ in range(5000)])
    # variance of the sample variance of N(0, 4) with n=5000 draws: 2*16/5000
    assert np.all(np.abs(x.var(axis=0) - 4.0) < 4 * np.sqrt(32 / 5000))
