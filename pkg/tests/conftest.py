import warnings

import numpy as np
import pytest
from hypothesis import settings

from sparsepcm.core import ComparisonSet, DensePcm

settings.register_profile("default", deadline=None)
settings.load_profile("default")

ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record an acceptance criterion outcome, then assert it."""

    def check(name: str, ok: bool, detail: str = ""):
        ACCEPTANCE.append((name, bool(ok), detail))
        assert ok, f"{name}: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  [{detail}]")
    passed = sum(ok for _, ok, _ in ACCEPTANCE)
    terminalreporter.write_line(f"{passed}/{len(ACCEPTANCE)} criteria passed")


@pytest.fixture
def matrix_b():
    return DensePcm(np.array([[1, 3, 4], [1 / 3, 1, 2], [1 / 4, 1 / 2, 1]]))


@pytest.fixture
def matrix_a():
    return DensePcm(np.array([[1, 2, 4], [1 / 2, 1, 2], [1 / 4, 1 / 2, 1]]))


@pytest.fixture
def chain4():
    return ComparisonSet.from_edges(4, [(0, 1, 3.0), (1, 2, 5.0), (2, 3, 2.0)])


@pytest.fixture
def chain5():
    return ComparisonSet.from_edges(5, [(0, 1, 3.0), (1, 2, 5.0), (2, 3, 2.0), (3, 4, 4.0)])


@pytest.fixture(autouse=True)
def _quiet_component_warnings():
    from sparsepcm.core import DisconnectedGraphWarning

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DisconnectedGraphWarning)
        yield
