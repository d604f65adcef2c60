import numpy as np
import pandas as pd
import pytest

from dynamic_model import equilibrium_covariance, population_covariance
from exceptions import InvalidInputError
from factor_extraction import (
    DimensionalityMethod, DimensionalityParams, cross_block_covariance, estimate_dimensionality,
    extract_loadings, first_factor_share, sample_covariance, write_scree_csv,
)
from linalg_core import permutation_matrix
from simulator import TrajectoryPanel

ALL_METHODS = list(DimensionalityMethod)


def params_for(n_observations=5000, **kwargs):
    kwargs.setdefault("replicates", 100)
    return DimensionalityParams(n_observations=n_observations, **kwargs)


def test_sample_covariance_of_constant_items_is_zero():
    panel = TrajectoryPanel(observations=np.full((5, 1, 3), 2.5))
    assert np.array_equal(sample_covariance(panel, 0), np.zeros((3, 3)))


def test_sample_covariance_uses_n_minus_one():
    obs = np.zeros((2, 1, 3))
    obs[1] = 2.0
    cov = sample_covariance(TrajectoryPanel(observations=obs), 0)
    assert np.allclose(cov, np.full((3, 3), 2.0))


def test_sample_covariance_single_item_is_matrix():
    panel = TrajectoryPanel(observations=np.arange(4.0).reshape(4, 1, 1))
    assert sample_covariance(panel, 0).shape == (1, 1)


def test_sample_covariance_rejects_bad_wave_and_tiny_panel():
    with pytest.raises(InvalidInputError):
        sample_covariance(TrajectoryPanel(observations=np.zeros((3, 2, 2))), 2)
    with pytest.raises(InvalidInputError):
        sample_covariance(TrajectoryPanel(observations=np.zeros((1, 2, 2))), 0)


def test_reduced_rank_of_identity_is_zero():
    report = estimate_dimensionality(np.eye(4))
    assert report.estimated_factors == 0
    assert report.threshold_used == 0.0
    assert np.allclose(report.eigenvalues, 1.0)


def test_reduced_rank_of_single_factor():
    lam = np.array([0.9, -0.5, 0.3, 0.7])
    report = estimate_dimensionality(np.eye(4) + np.outer(lam, lam), DimensionalityMethod.REDUCED_RANK)
    assert report.estimated_factors == 1
    assert report.method == DimensionalityMethod.REDUCED_RANK
    assert report.eigenvalues == sorted(report.eigenvalues, reverse=True)


@pytest.mark.parametrize("method", ALL_METHODS)
def test_equilibrium_covariance_supports_one_factor(figure1_spec, method):
    s = equilibrium_covariance(figure1_spec).covariance
    assert estimate_dimensionality(s, method, params_for()).estimated_factors == 1


@pytest.mark.parametrize("method", ALL_METHODS)
def test_first_wave_supports_two_factors(figure1_spec, method):
    s = population_covariance(figure1_spec, 1)
    assert estimate_dimensionality(s, method, params_for()).estimated_factors == 2


def test_method_accepts_string_names():
    report = estimate_dimensionality(np.eye(3), "gap-ratio")
    assert report.method == DimensionalityMethod.GAP_RATIO
    assert report.estimated_factors == 0
    with pytest.raises(InvalidInputError):
        estimate_dimensionality(np.eye(3), "scree-elbow")


def test_parallel_analysis_requires_sample_size():
    with pytest.raises(InvalidInputError):
        estimate_dimensionality(np.eye(3), DimensionalityMethod.PARALLEL_ANALYSIS)


def test_asymmetric_input_is_rejected():
    s = np.eye(3)
    s[0, 1] = 0.1
    with pytest.raises(InvalidInputError):
        estimate_dimensionality(s)
    with pytest.raises(InvalidInputError):
        extract_loadings(s, 1)


@pytest.mark.parametrize("method", ALL_METHODS)
def test_estimates_are_permutation_invariant(figure1_spec, method):
    s = population_covariance(figure1_spec, 2)
    p = permutation_matrix([11, 3, 7, 0, 5, 9, 1, 10, 2, 8, 4, 6])
    original = estimate_dimensionality(s, method, params_for())
    permuted = estimate_dimensionality(p @ s @ p.T, method, params_for())
    assert permuted.estimated_factors == original.estimated_factors
    assert np.allclose(permuted.eigenvalues, original.eigenvalues)


def test_parallel_analysis_threshold_is_reproducible():
    params = params_for(n_observations=300)
    first = estimate_dimensionality(np.eye(6), DimensionalityMethod.PARALLEL_ANALYSIS, params)
    second = estimate_dimensionality(np.eye(6), DimensionalityMethod.PARALLEL_ANALYSIS, params)
    assert first.threshold_used == second.threshold_used
    assert first.threshold_used > 1.0


def test_parallel_analysis_rarely_finds_factors_in_noise():
    n, p, trials = 1000, 12, 100
    params = params_for(n_observations=n, replicates=200)
    zero_counts = 0
    for trial in range(trials):
        noise = np.random.default_rng(trial).standard_normal((n, p))
        s = np.cov(noise, rowvar=False, ddof=1)
        report = estimate_dimensionality(s, DimensionalityMethod.PARALLEL_ANALYSIS, params)
        zero_counts += report.estimated_factors == 0
    assert zero_counts >= 0.9 * trials


def test_gap_ratio_respects_max_k():
    s = np.diag([9.0, 3.0, 1.0, 1.0])
    assert estimate_dimensionality(s, "gap-ratio").estimated_factors == 1
    assert estimate_dimensionality(s, "gap-ratio", DimensionalityParams(max_k=1)).estimated_factors == 1
    assert estimate_dimensionality(np.eye(1), "gap-ratio").estimated_factors == 0


def test_extract_single_factor_loadings():
    lam = np.array([0.9, -0.5, 0.3, 0.7])
    estimate = extract_loadings(np.eye(4) + np.outer(lam, lam), 1)
    assert estimate.loadings.shape == (4, 1)
    assert np.allclose(estimate.loadings[:, 0], lam)
    assert estimate.variance_explained[0] == pytest.approx(lam @ lam)


def test_extract_loadings_of_pure_noise_are_zero():
    estimate = extract_loadings(np.eye(3), 2)
    assert np.allclose(estimate.loadings, 0.0)
    assert estimate.variance_explained == [0.0, 0.0]


def test_extract_loadings_sign_convention(rng):
    x = rng.standard_normal((6, 2))
    estimate = extract_loadings(np.eye(6) + x @ x.T, 2)
    for column in estimate.loadings.T:
        assert column[np.argmax(np.abs(column))] > 0


def test_extract_loadings_residual_shrinks_with_k(figure1_spec):
    s = population_covariance(figure1_spec, 1)
    reduced = s - np.eye(12)
    residuals = []
    for k in range(1, 5):
        loadings = extract_loadings(s, k).loadings
        residuals.append(np.linalg.norm(reduced - loadings @ loadings.T))
    assert all(later <= earlier + 1e-12 for earlier, later in zip(residuals, residuals[1:]))
    assert residuals[1] == pytest.approx(0.0, abs=1e-10)


def test_extract_loadings_rejects_bad_k():
    with pytest.raises(InvalidInputError):
        extract_loadings(np.eye(3), 0)
    with pytest.raises(InvalidInputError):
        extract_loadings(np.eye(3), 4)


def test_cross_block_covariance(figure1_spec):
    uncoupled = figure1_spec.with_transition(np.eye(2))
    s = population_covariance(uncoupled, 5)
    summary = cross_block_covariance(s, range(6), range(6, 12))
    assert summary.max_abs == 0.0
    assert summary.mean_abs == 0.0

    coupled = cross_block_covariance(population_covariance(figure1_spec, 5), range(6), range(6, 12))
    assert coupled.max_abs > 0.1
    assert coupled.to_dict()['max_abs'] == coupled.max_abs


def test_cross_block_covariance_rejects_bad_blocks():
    s = np.eye(4)
    with pytest.raises(InvalidInputError):
        cross_block_covariance(s, [0, 1], [1, 2])
    with pytest.raises(InvalidInputError):
        cross_block_covariance(s, [], [1])
    with pytest.raises(InvalidInputError):
        cross_block_covariance(s, [0], [4])


def test_first_factor_share():
    lam = np.array([0.8, 0.8, 0.8])
    assert first_factor_share(np.eye(3) + np.outer(lam, lam)) == pytest.approx(1.0)
    assert first_factor_share(np.eye(3)) == 0.0
    assert first_factor_share(np.diag([2.0, 2.0, 1.0])) == pytest.approx(0.5)


def test_write_scree_csv(tmp_path):
    report = estimate_dimensionality(np.diag([3.0, 2.0, 1.0]))
    path = write_scree_csv(report, str(tmp_path / "scree.csv"))
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["index", "value"]
    assert frame["index"].tolist() == [1, 2, 3]
    assert np.allclose(frame["value"], [3.0, 2.0, 1.0])
