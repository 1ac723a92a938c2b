import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


class FixedDraws:
    """rng stand-in replaying one fixed uniform array per shape, so that
    graphs with masks or dropout are deterministic under re-evaluation."""

    def __init__(self, seed=0):
        self.seed = seed
        self.cache = {}

    def random(self, size):
        size = tuple(size)
        if size not in self.cache:
            self.cache[size] = np.random.default_rng([self.seed, len(self.cache)]).random(size)
        return self.cache[size]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting -------------------------------------------------------

ACCEPTANCE: dict[int, tuple[str, str]] = {}


def record(criterion: int, ok: bool | None, detail: str) -> bool | None:
    """ok=None marks a criterion that could not run here."""
    ACCEPTANCE[criterion] = ("SKIP" if ok is None else "PASS" if ok else "FAIL", detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
