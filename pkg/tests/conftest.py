from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ppdesign import scenarios as sc
from ppdesign.io import read_design_csv

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA = Path(__file__).parent / "data"


@pytest.fixture
def bench_space():
    return sc.bench_space(2, 1)


@pytest.fixture
def case_space():
    return sc.case_study_space()


@pytest.fixture(scope="session")
def robust_study_designs():
    return {k: read_design_csv(DATA / f"robust_study_{k}.csv") for k in ("main", "interaction", "robust")}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records and prints one pass/fail line, then asserts."""

    def report(n: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        _CRITERIA[n] = line
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
