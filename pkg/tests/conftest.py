import numpy as np
import pytest

from lsrsgd.problem import additive_instance, gaussian_instance, random_psd, random_spd


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def small_additive():
    return additive_instance([1.0, 0.5, 0.2], 0.1)


@pytest.fixture
def rotated_instance(rng):
    """Non-diagonal H with a generic (mis-specified) Sigma."""
    H = random_spd(4, rng, cond=8.0)
    return gaussian_instance(H, 0.05 * random_psd(4, rng), rng.standard_normal(4))


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
