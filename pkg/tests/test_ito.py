import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from fastmcs.ito import (
    Boundary, DistributionPreset, ItoModel, PolynomialMap, eval_diffusion, eval_drift, make_preset,
    model_from_name, stationary_moments, stationary_pdf, support, wind_model,
)


def preset_model(kind, a, b):
    return make_preset(DistributionPreset(kind, a, b))


# --- drift / diffusion evaluation -----------------------------------------


def test_gaussian_drift_value():
    assert eval_drift(preset_model("gaussian", 0, 1), [0.5], 0.0)[0] == pytest.approx(-0.5)


def test_wind_drift_at_zero():
    assert eval_drift(wind_model(), [0.0], 0.0)[0] == pytest.approx(0.0535)


def test_zero_polynomial_drift():
    model = ItoModel(PolynomialMap.zeros(2, (2, 1)), PolynomialMap.zeros(2, (2, 2)))
    np.testing.assert_array_equal(eval_drift(model, [3.0, -1.0]), [0.0, 0.0])


def test_gaussian_diffusion_is_root_two():
    for xi in (-3.0, 0.0, 2.5):
        assert eval_diffusion(preset_model("gaussian", 0, 1), [xi])[0, 0] == pytest.approx(math.sqrt(2))


def test_wind_diffusion_at_zero_keeps_sign():
    assert eval_diffusion(wind_model(), [0.0])[0, 0] == pytest.approx(-0.410)


def test_beta_diffusion_vanishes_at_boundary():
    assert eval_diffusion(preset_model("beta", 2, 2), [0.0])[0, 0] == 0.0


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        eval_drift(wind_model(), [0.1, 0.2])


# --- presets ---------------------------------------------------------------


@pytest.mark.parametrize("kind,a,b,x", [("beta", 2, 2, 0.5), ("gamma", 2, 4, 0.5)])
def test_preset_drift_vanishes_at_mean(kind, a, b, x):
    assert eval_drift(preset_model(kind, a, b), [x])[0] == pytest.approx(0.0, abs=1e-15)


def test_laplace_variance_at_location():
    sigma = eval_diffusion(preset_model("laplace", 1, 0.5), [1.0])[0, 0]
    assert sigma**2 == pytest.approx(0.5)


def tabulated_variance(kind, a, b, x):
    if kind == "gaussian":
        return 2 * b + 0 * x
    if kind == "beta":
        return 2 * x * (1 - x) / (a + b)
    if kind == "gamma":
        return 2 * x / b
    return 2 * b * np.abs(x - a) + 2 * b * b


@pytest.mark.parametrize("kind,a,b,grid", [
    ("gaussian", 0.3, 1.7, np.linspace(-5, 5, 101)),
    ("beta", 2.0, 5.0, np.linspace(0, 1, 101)),
    ("gamma", 2.0, 4.0, np.linspace(0, 5, 101)),
    ("laplace", -1.0, 0.7, np.linspace(-6, 4, 101)),
])
def test_squared_diffusion_matches_table(kind, a, b, grid):
    model = preset_model(kind, a, b)
    sig = model.diffusion_batch(grid[:, None])[:, 0, 0]
    np.testing.assert_allclose(sig**2, tabulated_variance(kind, a, b, grid), rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind,a,b", [("gaussian", 0, 0), ("beta", 0, 1), ("gamma", 2, -1), ("laplace", 0, 0)])
def test_invalid_preset_parameters(kind, a, b):
    with pytest.raises(ValueError):
        DistributionPreset(kind, a, b)


def test_preset_boundaries_and_start():
    beta = preset_model("beta", 2, 5)
    assert beta.boundary[0].kind == "reflect" and (beta.boundary[0].lo, beta.boundary[0].hi) == (0.0, 1.0)
    gamma = preset_model("gamma", 2, 4)
    assert gamma.boundary[0].kind == "clamp" and gamma.boundary[0].lo == pytest.approx(1e-9)
    assert preset_model("laplace", 0, 1).boundary[0].kind == "none"
    assert gamma.x0 == (0.5,)


def test_root_variance_ito_correction_is_quarter_derivative():
    preset = DistributionPreset("beta", 2, 5)
    model = make_preset(preset)
    x = np.array([[0.2], [0.5], [0.8]])
    expected = 0.25 * 2 * (1 - 2 * x[:, 0]) / 7
    np.testing.assert_allclose(model.ito_correction_batch(x)[:, 0], expected, rtol=1e-14)


# --- stationary densities ---------------------------------------------------


def test_pdf_examples():
    assert stationary_pdf(DistributionPreset("gaussian", 0, 1), 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi))
    assert stationary_pdf(DistributionPreset("laplace", 0, 1), 0.0) == pytest.approx(0.5)
    assert stationary_pdf(DistributionPreset("beta", 1, 1), 0.3) == pytest.approx(1.0)


def test_pdf_outside_support_is_zero():
    assert stationary_pdf(DistributionPreset("beta", 2, 3), 1.5) == 0.0
    assert stationary_pdf(DistributionPreset("gamma", 2, 3), -0.1) == 0.0


@pytest.mark.parametrize("kind,a,b", [("gaussian", 1, 2), ("beta", 2, 5), ("gamma", 2, 4), ("laplace", 0, 1)])
def test_pdf_normalised_with_matching_moments(kind, a, b):
    preset = DistributionPreset(kind, a, b)
    lo, hi = support(preset)
    pdf = lambda x: stationary_pdf(preset, x)  # noqa: E731
    mass = integrate.quad(pdf, lo, hi, limit=200)[0]
    assert mass == pytest.approx(1.0, abs=1e-6)
    mean = integrate.quad(lambda x: x * pdf(x), lo, hi, limit=200)[0]
    var = integrate.quad(lambda x: (x - mean) ** 2 * pdf(x), lo, hi, limit=200)[0]
    m, v = stationary_moments(preset)
    assert mean == pytest.approx(m, abs=1e-7) and var == pytest.approx(v, rel=1e-6)


def test_stationary_pdf_solves_fokker_planck():
    # zero probability flux: mu p - 0.5 d(sigma^2 p)/dx = 0
    for kind, a, b, xs in [("beta", 2, 5, [0.2, 0.4]), ("gamma", 2, 4, [0.3, 1.0]), ("laplace", 0.5, 1, [-1, 2])]:
        preset = DistributionPreset(kind, a, b)
        model = make_preset(preset)
        for x in xs:
            mu = eval_drift(model, [x])[0]
            g = lambda y: preset.variance_function(y) * stationary_pdf(preset, y)  # noqa: E731
            d = 1e-6
            flux = mu * stationary_pdf(preset, x) - 0.5 * (g(x + d) - g(x - d)) / (2 * d)
            assert abs(flux) < 1e-6


# --- polynomial maps ----------------------------------------------------------


def test_polynomial_jacobian_matches_finite_differences():
    poly = PolynomialMap([[((2, 1), 0.5), ((0, 0), 1.0)], [((1, 3), -2.0)], [((0, 2), 1.5)], [((1, 0), 3.0)]],
                         2, (2, 2))
    x = np.array([0.7, -1.3])
    jac = poly.jacobian(x)
    d = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = d
        np.testing.assert_allclose(jac[..., k], (poly(x + e) - poly(x - e)) / (2 * d), rtol=1e-7, atol=1e-8)


def test_polynomial_rejects_bad_exponents():
    with pytest.raises(ValueError):
        PolynomialMap([[((1,), 1.0)]], 2, (1, 1))
    with pytest.raises(ValueError):
        PolynomialMap([[((-1,), 1.0)]], 1, (1, 1))


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=4), st.floats(-3, 3))
@settings(max_examples=50, deadline=None)
def test_scalar_polynomial_matches_horner(coefs, x):
    poly = PolynomialMap.scalar(coefs)
    assert poly(np.array([x]))[0, 0] == pytest.approx(np.polyval(coefs[::-1], x), rel=1e-12, abs=1e-12)


# --- boundaries and model files ------------------------------------------------


def test_reflect_boundary():
    b = Boundary("reflect", 0.0, 1.0)
    np.testing.assert_allclose(b.apply(np.array([-0.1, 0.5, 1.2])), [0.1, 0.5, 0.8])
    # a single reflection that lands past the far side falls back to clamping
    assert b.apply(np.array([3.5]))[0] == 0.0


def test_empty_boundary_interval():
    with pytest.raises(ValueError):
        Boundary("clamp", 1.0, 1.0)


@pytest.mark.parametrize("model", [wind_model(), preset_model("beta", 2, 5), preset_model("gamma", 2, 4)])
def test_model_file_round_trip(tmp_path, model):
    path = tmp_path / "m.json"
    model.save(path)
    loaded = ItoModel.load(path)
    x = np.linspace(0.05, 0.95, 7)[:, None]
    np.testing.assert_array_equal(loaded.drift_batch(x), model.drift_batch(x))
    np.testing.assert_array_equal(loaded.diffusion_batch(x), model.diffusion_batch(x))
    assert loaded.boundary == model.boundary and loaded.x0 == model.x0


def test_model_from_name():
    assert model_from_name("wind").name == "wind"
    with pytest.raises(ValueError, match="unknown preset"):
        model_from_name("weibull", 1, 1)
    with pytest.raises(ValueError):
        model_from_name("gaussian")


def test_wind_reference_state_is_stable_equilibrium():
    model = wind_model()
    x = model.x0[0]
    assert eval_drift(model, [x])[0] == pytest.approx(0.0, abs=1e-15)
    assert 0.0349 * 2 * x - 0.0899 < 0
