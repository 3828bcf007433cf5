import numpy as np
import pytest

from fastmcs.ito import ItoModel, PolynomialMap

ACCEPTANCE_LINES: list[str] = []


def unit_diffusion_model() -> ItoModel:
    """dξ = dW: zero drift, unit diffusion."""
    return ItoModel(PolynomialMap.scalar([0.0]), PolynomialMap.scalar([1.0]), name="wiener")


def zero_model(x0=1.0) -> ItoModel:
    return ItoModel(PolynomialMap.scalar([0.0]), PolynomialMap.scalar([0.0]), x0=(x0,), name="still")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
