import numpy as np
import pytest
from scipy.io import wavfile

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def write_wav(tmp_path):
    def _write(name, rate, data):
        path = tmp_path / name
        wavfile.write(path, rate, data)
        return path

    return _write
