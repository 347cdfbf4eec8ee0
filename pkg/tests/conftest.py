import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mobility_miner.gmm import MixtureDensity

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_spd(rng, lo=0.3, hi=3.0):
    theta = rng.uniform(0, np.pi)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    return rot @ np.diag(rng.uniform(lo, hi, size=2)) @ rot.T


def random_mixture(rng, max_k=4, spread=10.0):
    k = int(rng.integers(1, max_k + 1))
    return MixtureDensity.from_arrays(
        rng.dirichlet(np.ones(k)) * 0.999 + 0.001 / k,
        rng.uniform(-spread, spread, size=(k, 2)),
        np.array([random_spd(rng) for _ in range(k)]))


def blobs(centres, n_each, sd=1.0, seed=0):
    rng = np.random.default_rng(seed)
    return np.concatenate([np.asarray(c, float) + sd * rng.standard_normal((n_each, 2))
                           for c in centres])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
