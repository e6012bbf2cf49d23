from __future__ import annotations

import numpy as np
import pytest
import torch
from hypothesis import settings

from hiermotion.synthetic import GenConfig, generate_records

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def small_records():
    """Six ground-truth records shared by the tests that only read them."""
    return generate_records(GenConfig(seed=3, n_sequences=6))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion
_DETAILS: dict[int, str] = {}
_OUTCOMES: dict[int, str] = {}


def _criterion_of(nodeid: str) -> int | None:
    name = nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" in nodeid and name.startswith("test_criterion_"):
        return int(name.split("_")[2])
    return None


@pytest.fixture
def criterion(request):
    """``criterion(detail)`` attaches measured values to the summary line."""
    n = _criterion_of(request.node.nodeid)

    def record(detail: str):
        _DETAILS[n] = detail
        print(f"criterion {n}: {detail}")

    return record


def pytest_runtest_logreport(report):
    n = _criterion_of(report.nodeid)
    if n is None:
        return
    if report.failed:
        _OUTCOMES[n] = "FAIL"
    elif report.when == "call" and report.passed:
        _OUTCOMES.setdefault(n, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        terminalreporter.write_line(f"criterion {n:>2}: {_OUTCOMES[n]}  {_DETAILS.get(n, '')}")
