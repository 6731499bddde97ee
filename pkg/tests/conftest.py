import numpy as np
import pytest

from isoflopfit.model import get_surface
from isoflopfit.simulate import BiasSpec, build_experiment, grid_spec, log_uniform_budgets

SURFACE_NAMES = ("symmetric", "chinchilla", "asymmetric")
# Twenty sampling half-factors spanning the XS to XL presets.
SAMPLING_RANGES = tuple(np.geomspace(2.0, 16.0, 20))


def experiment(surface="symmetric", grid="XL", n_points=15, n_budgets=5, bias=None):
    if isinstance(surface, str):
        surface = get_surface(surface)
    return build_experiment(
        surface, log_uniform_budgets(n_budgets), grid_spec(grid, n_points), bias or BiasSpec()
    )


def rel_err(fitted, truth):
    f, t = np.asarray(fitted, dtype=float), np.asarray(truth, dtype=float)
    return np.abs(f - t) / np.abs(t)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: (int(k.split("-")[0]), k)):
        terminalreporter.write_line(RESULTS[key])
