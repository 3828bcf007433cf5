import io
import math

import numpy as np
import pytest

from conftest import zero_model
from fastmcs.exceptions import SimulationError
from fastmcs.ito import DistributionPreset, ItoModel, PolynomialMap, make_preset
from fastmcs.sde import PathSet, TimeGrid, em_batch, em_step, simulate_em_paths

GAUSS = make_preset(DistributionPreset("gaussian", 0.0, 1.0))


def test_em_step_identity_without_coefficients():
    np.testing.assert_array_equal(em_step(zero_model(), [0.3], 0.0, 0.1, [2.0]), [0.3])


def test_em_step_hand_values():
    assert em_step(GAUSS, [1.0], 0.0, 0.01, [0.0])[0] == pytest.approx(0.99, abs=1e-15)
    assert em_step(GAUSS, [1.0], 0.0, 0.01, [1.0])[0] == pytest.approx(0.99 + math.sqrt(2) * 0.1, abs=1e-15)


def test_em_step_reports_component_on_overflow():
    model = ItoModel(PolynomialMap.scalar([0.0, 0.0, 1e308]), PolynomialMap.scalar([0.0]))
    with pytest.raises(SimulationError) as info:
        em_step(model, [1e10], 0.0, 1.0, [0.0])
    assert info.value.component == 0


def test_time_grid_validation():
    assert TimeGrid(0.0, 1.0, 0.1).n_steps == 10
    assert TimeGrid(0.0, 60.0, 0.05).n_steps == 1200
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 0.3)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, -0.1)


def test_drift_only_endpoint_matches_exponential_decay():
    model = ItoModel(PolynomialMap.scalar([0.0, -1.0]), PolynomialMap.scalar([0.0]), x0=(1.0,))
    paths = simulate_em_paths(model, TimeGrid(0.0, 1.0, 1e-4), None, 1, seed=0)
    assert paths.values[0, -1, 0] == pytest.approx(math.exp(-1.0), abs=1e-3)
    # zero diffusion reduces to explicit Euler exactly
    assert paths.values[0, -1, 0] == pytest.approx((1 - 1e-4) ** 10_000, rel=1e-12)


def test_paths_are_deterministic_and_start_at_x0():
    grid = TimeGrid(0.0, 1.0, 0.01)
    a = simulate_em_paths(GAUSS, grid, [0.4], 3, seed=11)
    b = simulate_em_paths(GAUSS, grid, [0.4], 3, seed=11)
    assert a == b
    np.testing.assert_array_equal(a.values[:, 0, 0], 0.4)


def test_path_depends_only_on_seed_and_index():
    grid = TimeGrid(0.0, 2.0, 0.01)
    five = em_batch(GAUSS, grid, [0.0], range(5), 4)
    single = em_batch(GAUSS, grid, [0.0], [3], 4)
    chunked = em_batch(GAUSS, grid, [0.0], [3], 4, chunk_steps=7)
    np.testing.assert_array_equal(five[3], single[0])
    np.testing.assert_array_equal(single, chunked)


def test_per_path_seeds_match_single_seed_calls():
    grid = TimeGrid(0.0, 1.0, 0.05)
    mixed = em_batch(GAUSS, grid, [0.0], [0, 1], [5, 9])
    np.testing.assert_array_equal(mixed[0], em_batch(GAUSS, grid, [0.0], [0], 5)[0])
    np.testing.assert_array_equal(mixed[1], em_batch(GAUSS, grid, [0.0], [1], 9)[0])


def test_stationary_variance_of_gaussian_preset():
    grid = TimeGrid(0.0, 8.0, 0.01)
    end = em_batch(GAUSS, grid, [0.0], range(100_000), 1, substeps=1)[:, -1, 0]
    # EM's stationary variance for this OU discretisation is b / (1 - h/2)
    assert np.var(end) == pytest.approx(1.0 / (1 - 0.005), rel=0.02)
    assert abs(np.mean(end)) < 5 * math.sqrt(1.0 / 100_000)


def test_reflect_boundary_keeps_paths_in_support():
    beta = make_preset(DistributionPreset("beta", 0.5, 0.5))
    values = simulate_em_paths(beta, TimeGrid(0.0, 5.0, 0.01), None, 200, seed=2).values
    assert values.min() >= 0.0 and values.max() <= 1.0


def test_substeps_record_coarse_grid():
    fine = em_batch(GAUSS, TimeGrid(0.0, 1.0, 0.01), [0.0], [0], 3)
    coarse = em_batch(GAUSS, TimeGrid(0.0, 1.0, 0.1), [0.0], [0], 3, substeps=10)
    np.testing.assert_array_equal(coarse[0], fine[0, ::10])


def test_weak_order_one():
    # E[xi_T] for dxi = -xi dt + sqrt(2) dW from 1 is (1 - h)^n under EM: error ratio 2 per halving
    T = 1.0
    errors = []
    for h in (0.1, 0.05, 0.025):
        n = round(T / h)
        errors.append(abs((1 - h) ** n - math.exp(-T)))
        grid = TimeGrid(0.0, T, h)
        means = em_batch(GAUSS, grid, [1.0], range(20_000), 8)[:, -1, 0].mean()
        assert means == pytest.approx((1 - h) ** n, abs=4 * math.sqrt(1.0 / 20_000))
    assert errors[0] / errors[1] == pytest.approx(2.0, rel=0.1)
    assert errors[1] / errors[2] == pytest.approx(2.0, rel=0.1)


def test_simulation_error_locates_path_and_step():
    blowup = ItoModel(PolynomialMap.scalar([0.0, 0.0, 1.0]), PolynomialMap.scalar([0.0]), x0=(1.0,))
    with pytest.raises(SimulationError) as info:
        em_batch(blowup, TimeGrid(0.0, 100.0, 0.5), [1.0], [7], 0)
    assert info.value.path == 7 and info.value.step is not None


def test_csv_round_trip():
    paths = simulate_em_paths(GAUSS, TimeGrid(0.0, 0.3, 0.1), [0.2], 2, seed=1)
    text = paths.to_csv()
    assert text.splitlines()[2] == "path_id,t,xi_1"
    back = PathSet.from_csv(io.StringIO(text))
    assert back == paths


def test_csv_requires_header():
    with pytest.raises(ValueError, match="header"):
        PathSet.from_csv(io.StringIO("0,0.0,1.0\n0,0.1,1.0\n"))


def test_pathset_rejects_non_finite():
    with pytest.raises(ValueError):
        PathSet(TimeGrid(0.0, 0.1, 0.1), np.array([[[0.0], [np.nan]]]))
