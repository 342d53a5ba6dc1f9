import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from papcbeam import kernels
from papcbeam.model import ScenarioConfig

settings.register_profile("pkg", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkg")

GAMMA_3DB = 10.0**0.3

CRITERIA_LINES = []  # acceptance report lines, shown in the terminal summary


def crandn(rng, *shape):
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2.0)


def random_channels(rng, n, k, lo=0.5, hi=20.0):
    """Noise-normalised channels with per-user gains drawn uniformly in [lo, hi]."""
    return crandn(rng, n, k) * np.sqrt(rng.uniform(lo, hi, k))


def unit_columns(rng, n, k):
    u = crandn(rng, n, k)
    return u / np.linalg.norm(u, axis=0)


def scenario(n=4, k=3, total=40.0, **kw):
    kw.setdefault("sinr_target", GAMMA_3DB)
    kw.setdefault("error_variance", 0.04)
    return ScenarioConfig.uniform(n, k, total, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=["python"] + (["cython"] if kernels._ext is not None else []))
def backend(request):
    previous = kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)
