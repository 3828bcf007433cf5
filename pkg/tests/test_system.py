import math
import sys

import numpy as np
import pytest

from fastmcs.exceptions import SamplerError
from fastmcs.sde import TimeGrid
from fastmcs.system import (
    NO_TRIP, EndpointRRF, ExternalSimulatorRRF, FrequencyModel, FrequencyResponseRRF, FunctionRRF,
    ResponseTrajectory, TripEvent, rrf_rms, simulate_response, simulate_response_batch,
)

GRID = TimeGrid(0.0, 60.0, 0.05)


def flat(value, grid=GRID):
    return np.full(grid.n_steps + 1, value)


def test_equilibrium_gives_zero_response():
    model = FrequencyModel(schedule=0.9)
    traj = simulate_response(model, flat(0.9), NO_TRIP, GRID)
    np.testing.assert_array_equal(traj.freq_deviation, 0.0)


def test_trip_settles_at_static_response():
    model = FrequencyModel(schedule=0.9)
    traj = simulate_response(model, flat(0.9), TripEvent(1.0, 0.08), GRID)
    assert traj.freq_deviation[-1] == pytest.approx(-0.08 / (model.D + 1 / model.R), rel=1e-6)
    # nothing happens before the trip
    np.testing.assert_array_equal(traj.freq_deviation[GRID.times < 1.0], 0.0)


def test_wind_surplus_raises_frequency():
    model = FrequencyModel(schedule=0.0)
    traj = simulate_response(model, flat(0.1), NO_TRIP, GRID)
    expected = 0.1 * model.wind_base / model.Pbase / model.stiffness
    assert traj.freq_deviation[-1] == pytest.approx(expected, rel=1e-6)


def test_response_is_linear_in_inputs():
    model = FrequencyModel()
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, GRID.n_steps + 1))
    event = TripEvent(1.0, 0.05)
    ra = simulate_response_batch(model, a[None], NO_TRIP, GRID)[0]
    rb = simulate_response_batch(model, b[None], NO_TRIP, GRID)[0]
    rt = simulate_response_batch(model, np.zeros((1, GRID.n_steps + 1)), event, GRID)[0]
    both = simulate_response_batch(model, (2 * a + b)[None], event, GRID)[0]
    np.testing.assert_allclose(both, 2 * ra + rb + rt, atol=1e-14)


def test_batch_matches_single_paths():
    model = FrequencyModel()
    paths = np.random.default_rng(1).standard_normal((3, GRID.n_steps + 1))
    batch = simulate_response_batch(model, paths, TripEvent(), GRID)
    for k in range(3):
        np.testing.assert_array_equal(batch[k], simulate_response_batch(model, paths[k:k + 1], TripEvent(), GRID)[0])


def test_response_energy_decays_without_input():
    # dissipative: after the trip transient the deviation stops changing
    model = FrequencyModel(schedule=0.0)
    d = simulate_response(model, flat(0.0), TripEvent(0.0, 0.1), GRID).freq_deviation
    assert abs(d[-1] - d[-100]) < 1e-10


def test_rms_examples():
    grid = TimeGrid(0.0, 10.0, 0.001)
    assert rrf_rms(ResponseTrajectory(grid, flat(0.0, grid)), (0.0, 10.0)) == 0.0
    assert rrf_rms(ResponseTrajectory(grid, flat(-0.3, grid)), (0.0, 10.0)) == pytest.approx(0.3, rel=1e-14)
    sine = 2.5 * np.sin(2 * math.pi * grid.times)
    assert rrf_rms(ResponseTrajectory(grid, sine), (0.0, 10.0)) == pytest.approx(2.5 / math.sqrt(2), rel=1e-6)
    assert rrf_rms(ResponseTrajectory(grid, sine), (2.0, 5.0)) == pytest.approx(2.5 / math.sqrt(2), rel=1e-6)


@pytest.mark.parametrize("window", [(-1.0, 5.0), (0.0, 11.0), (5.0, 4.0), (3.0001, 3.0002)])
def test_rms_window_errors(window):
    grid = TimeGrid(0.0, 10.0, 0.1)
    with pytest.raises(ValueError):
        rrf_rms(ResponseTrajectory(grid, flat(1.0, grid)), window)


def test_model_parameter_validation():
    with pytest.raises(ValueError):
        FrequencyModel(H=0.0)
    with pytest.raises(ValueError):
        FrequencyModel(R=-1.0)
    with pytest.raises(ValueError):
        TripEvent(-1.0, 0.1)
    with pytest.raises(ValueError):
        simulate_response(FrequencyModel(), np.zeros(5), NO_TRIP, GRID)


def test_rrf_contracts():
    paths = np.random.default_rng(2).standard_normal((4, GRID.n_steps + 1, 1))
    rrf = FrequencyResponseRRF(window=(0.0, 60.0))
    values = rrf(paths, GRID)
    assert values.shape == (4,) and np.all(values >= 0)
    np.testing.assert_array_equal(EndpointRRF()(paths, GRID), paths[:, -1, 0])
    mean_rrf = FunctionRRF(lambda p, g: p[:, 0].mean())
    np.testing.assert_allclose(mean_rrf(paths, GRID), paths[:, :, 0].mean(axis=1))


def test_bind_schedule_fills_missing_value():
    rrf = FrequencyResponseRRF()
    assert rrf.bind_schedule(0.93).schedule == 0.93
    fixed = FrequencyResponseRRF(schedule=0.5)
    assert fixed.bind_schedule(0.93) is fixed


def test_external_simulator_round_trip():
    grid = TimeGrid(0.0, 1.0, 0.25)
    script = (
        "import sys, csv\n"
        "rows = [r for r in csv.reader(l for l in sys.stdin if not l.startswith('#'))][1:]\n"
        "print(float(rows[-1][2]) * 2)\n"
    )
    rrf = ExternalSimulatorRRF([sys.executable, "-c", script])
    paths = np.array([[[0.0], [1.0], [2.0], [3.0], [4.5]], [[0.0]] * 4 + [[-1.0]]])
    np.testing.assert_allclose(rrf(paths, grid), [9.0, -2.0])


@pytest.mark.parametrize("script", ["import sys; sys.exit(3)", "print('nan')", "print('hello')"])
def test_external_simulator_failures(script):
    grid = TimeGrid(0.0, 1.0, 0.5)
    rrf = ExternalSimulatorRRF([sys.executable, "-c", script])
    with pytest.raises(SamplerError):
        rrf(np.zeros((1, 3, 1)), grid)


def test_external_simulator_missing_program():
    with pytest.raises(SamplerError):
        ExternalSimulatorRRF("/nonexistent/simulator")(np.zeros((1, 3, 1)), TimeGrid(0.0, 1.0, 0.5))
