import numpy as np
import pytest

from glfield.geometry import StarDomain


@pytest.fixture(scope="session")
def disk():
    return StarDomain.disk()


@pytest.fixture(scope="session")
def wobbly():
    return StarDomain.fourier(1.0, ((2, 0.12, 0.0), (3, 0.05, 0.7)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance") and getattr(mod, "LINES", None):
            terminalreporter.section("acceptance criteria")
            for k in sorted(mod.LINES):
                terminalreporter.write_line(mod.LINES[k])
