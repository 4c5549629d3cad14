import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ETA = np.diag([1.0, -1.0, -1.0, -1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_symmetric(rng, n, invertible=True):
    while True:
        a = rng.normal(size=(n, n))
        a = a + a.T
        ev = np.linalg.eigvalsh(a)
        if not invertible or np.abs(ev).min() > 0.1 * np.abs(ev).max():
            return a


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
