import io
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from fastmcs.sampling import (
    ImanConoverDecorrelator, LatinHypercubeNormal, SampleMatrix, decorrelate, inverse_normal_cdf, lhs_normal,
    max_offdiag_correlation, norm_ppf, srs_normal,
)


def strata(row):
    return np.sort(np.floor(norm.cdf(row) * row.size).astype(int))


def test_inverse_normal_cdf_examples():
    assert inverse_normal_cdf(0.5) == 0.0
    assert inverse_normal_cdf(0.975) == pytest.approx(1.959964, abs=1e-5)


def test_inverse_normal_cdf_against_reference():
    p = np.concatenate([np.linspace(1e-12, 1e-6, 50), np.linspace(1e-6, 1 - 1e-6, 2001), 1 - np.logspace(-12, -6, 50)])
    ref = norm.ppf(p)
    assert np.all(np.abs(norm_ppf(p) - ref) <= 1e-9 * np.maximum(1.0, np.abs(ref)))


@given(st.integers(1, 2**40 - 1))
@settings(max_examples=100, deadline=None)
def test_inverse_normal_cdf_is_odd(k):
    # dyadic p so that 1 - p is exact
    p = k / 2.0**41
    assert inverse_normal_cdf(p) == pytest.approx(-inverse_normal_cdf(1 - p), abs=1e-9)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, float("nan")])
def test_inverse_normal_cdf_domain(p):
    with pytest.raises(ValueError):
        inverse_normal_cdf(p)


def test_lhs_midpoint_examples():
    np.testing.assert_array_equal(lhs_normal(1, 1, placement="midpoint").values, [[0.0]])
    two = sorted(lhs_normal(1, 2, placement="midpoint").values[0])
    np.testing.assert_allclose(two, [-0.67449, 0.67449], atol=1e-4)


@given(st.integers(1, 8), st.integers(1, 300), st.integers(0, 2**32), st.sampled_from(["uniform_in_stratum", "midpoint"]))
@settings(max_examples=60, deadline=None)
def test_lhs_one_value_per_stratum(M, N, seed, placement):
    s = lhs_normal(M, N, seed, placement)
    assert s.values.shape == (M, N) and s.method == "lhs"
    for row in s.values:
        np.testing.assert_array_equal(strata(row), np.arange(N))


def test_lhs_is_deterministic_and_seed_sensitive():
    assert lhs_normal(3, 20, 5) == lhs_normal(3, 20, 5)
    assert lhs_normal(3, 20, 5) != lhs_normal(3, 20, 6)


def test_lhs_rows_do_not_depend_on_row_count():
    np.testing.assert_array_equal(lhs_normal(2, 30, 1).values, lhs_normal(5, 30, 1).values[:2])


def test_lhs_rejects_bad_arguments():
    with pytest.raises(ValueError):
        lhs_normal(0, 5)
    with pytest.raises(ValueError):
        lhs_normal(2, 5, placement="corner")
    with pytest.raises(ValueError):
        lhs_normal(2, 5, seed=-1)


def test_decorrelate_preserves_rows_and_reduces_correlation():
    s = lhs_normal(5, 100, seed=3)
    d = decorrelate(s, seed=3)
    assert d.method == "lhs_decorrelated"
    for a, b in zip(s.values, d.values):
        np.testing.assert_array_equal(np.sort(a), np.sort(b))
    assert max_offdiag_correlation(d.values) < max_offdiag_correlation(s.values)


def test_decorrelate_single_row_is_identity():
    s = lhs_normal(1, 40, seed=2)
    np.testing.assert_array_equal(decorrelate(s).values, s.values)


def test_decorrelate_fallback_is_flagged():
    s = lhs_normal(6, 3, seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        d = decorrelate(s, seed=0)
    assert "fallback_permutation" in d.flags
    assert max_offdiag_correlation(d.values) <= max_offdiag_correlation(s.values) + 1e-12


def test_srs_properties():
    assert srs_normal(3, 10, 4) == srs_normal(3, 10, 4)
    big = srs_normal(2, 100_000, seed=1).values
    assert np.all(np.abs(big.mean(axis=1)) < 0.02)


def test_sample_matrix_validation():
    with pytest.raises(ValueError):
        SampleMatrix(np.array([[0.0, np.inf]]), "srs")
    with pytest.raises(ValueError):
        SampleMatrix(np.zeros((2, 2)), "sobol")


def test_sample_matrix_csv_round_trip():
    s = decorrelate(lhs_normal(3, 7, seed=9), seed=9)
    back = SampleMatrix.from_csv(io.StringIO(s.to_csv()))
    assert back == s and back.flags == s.flags


def test_columns_are_sample_vectors():
    s = lhs_normal(4, 9, seed=1)
    assert s.columns.shape == (9, 4)
    np.testing.assert_array_equal(s.columns[2], s.values[:, 2])


def test_sklearn_sampler_and_transformer():
    from sklearn.base import clone

    sampler = LatinHypercubeNormal(n_samples=50, random_state=2)
    X = sampler.sample(4)
    assert X.shape == (50, 4)
    assert clone(sampler).get_params() == sampler.get_params()
    np.testing.assert_array_equal(X, clone(sampler).sample(4))
    for col in X.T:
        np.testing.assert_array_equal(strata(col), np.arange(50))

    raw = lhs_normal(4, 50, seed=2).columns
    out = ImanConoverDecorrelator(random_state=2).fit_transform(raw)
    for a, b in zip(raw.T, out.T):
        np.testing.assert_array_equal(np.sort(a), np.sort(b))

    srs = LatinHypercubeNormal(n_samples=10, method="srs", random_state=1).sample_matrix(2)
    assert srs.method == "srs"
