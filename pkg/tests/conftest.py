import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gpsep import _kernels
from gpsep.model import DataMatrix, GridGeometry, Hyperparams, NoiseDraws, init_model

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture(params=_kernels.available_backends())
def backend(request):
    """Run the test once per available kernel backend."""
    previous = _kernels.backend()
    _kernels.use_backend(request.param)
    yield request.param
    _kernels.use_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_problem():
    """P=6 subjects on a 3x3 grid with two sources and three random features."""
    rng = np.random.default_rng(3)
    data = DataMatrix(rng.standard_normal((6, 9)), grid=GridGeometry(3, 3))
    hp = Hyperparams(sigma=0.7, lam=3.0, n_sources=2, n_features_rff=3, control_points=np.linspace(0, 1, 8))
    state = init_model(data, hp, seed=1)
    x = state.to_vector()
    state = state.with_vector(x + 0.3 * rng.standard_normal(x.size))
    draws = [NoiseDraws.sample(rng, 2, 3, 9) for _ in range(2)]
    return state, data, hp, draws


_ACCEPTANCE_LINES = []


@pytest.fixture
def report_criterion():
    """Record a one-line pass/fail verdict that is repeated in the terminal summary."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
