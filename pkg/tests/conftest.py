import os

import pytest
from hypothesis import HealthCheck, settings

from bmtsim import CacheConfig, TreeGeometry

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# one line per acceptance criterion, printed in the terminal summary
CRITERIA: dict = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    prev = CRITERIA.get(number)
    if prev is not None:
        ok = ok and prev[0]
        detail = f"{prev[1]}; {detail}"
    CRITERIA[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        ok, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")


@pytest.fixture
def default_geometry():
    return TreeGeometry(arity=8, levels=3)


@pytest.fixture
def default_cache():
    return CacheConfig.split((1024, 448, 64), ways=4)
