import time
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


class _Criterion:
    """Context manager that records one PASS/FAIL line for an acceptance criterion."""

    def __init__(self, lines, number, title):
        self.lines, self.number, self.title = lines, number, title
        self.details = []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        dt = time.perf_counter() - self.t0
        status = "PASS" if exc_type is None else "FAIL"
        extra = "; ".join(self.details + ([f"{exc_type.__name__}: {exc}"] if exc_type else []))
        line = f"[{status}] criterion {self.number}: {self.title} ({dt:.1f} s)"
        if extra:
            line += f" :: {extra}"
        self.lines.append(line.splitlines()[0] if exc_type else line)
        print(line)
        return False


@pytest.fixture
def criterion(request):
    lines = request.config.stash[_CRITERIA]
    return lambda number, title: _Criterion(lines, number, title)


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
