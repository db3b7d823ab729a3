import numpy as np
import pytest

from ordinalcar.model import ModelSpec, ParameterState, category_probs, cutpoints_from_simplex
from ordinalcar.synth import TrueParameters, generate_dataset, grid_graph, mixing_for_correlation
from conftest import make_survey


def test_grid_sizes():
    assert grid_graph(1, 1).num_edges == 0
    assert grid_graph(2, 2).num_edges == 4
    g = grid_graph(3, 3)
    assert g.num_edges == 12 and g.degrees[0] == 2 and g.degrees[4] == 4
    with pytest.raises(ValueError):
        grid_graph(0, 3)


def test_mixing_for_correlation():
    corr = np.array([[1.0, 0.7, 0.0], [0.7, 1.0, -0.5], [0.0, -0.5, 1.0]])
    m = mixing_for_correlation(corr, [1.0, 2.0, 0.5])
    np.testing.assert_allclose(m.T @ m, corr * np.outer([1, 2, 0.5], [1, 2, 0.5]), atol=1e-12)


def _flat_truth(M, K, J, Z, per_area, phi=None):
    state = ParameterState(delta=np.full((Z, K, J), 1.0 / J), phi=np.zeros((M, K)) if phi is None else phi,
                           mixing=np.eye(K), rho=np.full(K, 0.5), sigma_M=1.0)
    return TrueParameters(state, np.full(M, per_area), np.full(Z, 1.0 / Z))


def test_uniform_categories():
    spec = ModelSpec("corr", 4, 1, 1, 1)
    s = generate_dataset(_flat_truth(1, 1, 4, 1, 100_000), spec, grid_graph(1, 1), seed=0)
    freq = np.bincount(s.data.responses[:, 0], minlength=5)[1:] / 100_000
    np.testing.assert_allclose(freq, 0.25, atol=0.005)


def test_negative_theta_shifts_toward_last_category():
    spec = ModelSpec("corr", 4, 1, 1, 4)
    phi = np.zeros((4, 1))
    phi[2] = -3.0
    s = generate_dataset(_flat_truth(4, 1, 4, 1, 2000, phi), spec, grid_graph(2, 2), seed=1)
    y, area = s.data.responses[:, 0], s.data.area_index
    assert np.mean(y[area == 2] == 1) < np.mean(y == 1)
    assert np.mean(y[area == 2] == 4) > np.mean(y == 4)


def test_moment_round_trip():
    spec = ModelSpec("corr", 4, 2, 2, 1)
    delta = np.array([[[0.1, 0.2, 0.3, 0.4], [0.4, 0.3, 0.2, 0.1]], [[0.25] * 4, [0.7, 0.1, 0.1, 0.1]]])
    state = ParameterState(delta=delta, phi=np.zeros((1, 2)), mixing=np.eye(2), rho=np.full(2, 0.5), sigma_M=1.0)
    s = generate_dataset(TrueParameters(state, [100_000], [0.5, 0.5]), spec, grid_graph(1, 1), seed=2)
    for z in range(2):
        rows = s.data.cell_index == z
        n = rows.sum()
        for k in range(2):
            p = category_probs(0.0, cutpoints_from_simplex(s.truth.delta[z, k]))
            freq = np.bincount(s.data.responses[rows, k], minlength=5)[1:] / n
            assert np.all(np.abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / n))


def test_truth_is_centred():
    spec, graph, s = make_survey("corr_ire", seed=4)
    n_m = s.data.area_sample_sizes
    np.testing.assert_allclose(n_m @ s.truth.phi, 0.0, atol=1e-10)
    np.testing.assert_allclose(s.theta, s.truth.phi @ s.truth.mixing)
    assert s.psi.shape == (s.data.num_respondents, 2)


def test_deterministic():
    a = make_survey("corr_ire", seed=9)[2]
    b = make_survey("corr_ire", seed=9)[2]
    np.testing.assert_array_equal(a.data.responses, b.data.responses)
    np.testing.assert_array_equal(a.theta, b.theta)


def test_dimension_mismatch():
    spec = ModelSpec("corr", 4, 1, 1, 4)
    with pytest.raises(ValueError):
        generate_dataset(_flat_truth(4, 1, 4, 1, 10), spec, grid_graph(1, 3), seed=0)
    with pytest.raises(ValueError):
        TrueParameters(_flat_truth(4, 1, 4, 1, 10).state, [0, 1, 1, 1], [1.0])
