import numpy as np
import pytest

from echogaze.fmcw import FrameConfig
from echogaze.protocol import ScreenGeometry


@pytest.fixture
def cfg():
    return FrameConfig()


@pytest.fixture
def geom():
    return ScreenGeometry()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def dft(x, n=None):
    """Direct O(n^2) DFT of the non-negative frequencies; independent of np.fft."""
    x = np.asarray(x, dtype=np.float64)
    n = n or x.size
    k = np.arange(n // 2 + 1)[:, None]
    m = np.arange(x.size)[None, :]
    return np.exp(-2j * np.pi * k * m / n) @ x


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
