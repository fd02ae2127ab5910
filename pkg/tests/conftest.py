import logging

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from seqsoc.cell import BatteryState, preset
from seqsoc.estimators import GaussianEstimate

settings.register_profile("ci", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture
def cell():
    return preset("samsung-18650-20C")


@pytest.fixture
def clean_cell(cell):
    return cell.with_noise(0.0)


@pytest.fixture
def rest_state():
    return BatteryState(v_c=0.0, z=0.8)


@pytest.fixture(autouse=True)
def _quiet_projection_warnings():
    logging.getLogger("seqsoc").setLevel(logging.ERROR)
    yield
    logging.getLogger("seqsoc").setLevel(logging.NOTSET)


def assert_psd(est: GaussianEstimate, tol: float = 1e-12) -> None:
    cov = est.cov
    assert np.array_equal(cov, cov.T)
    assert np.min(np.linalg.eigvalsh(cov)) >= -tol * max(1.0, np.max(np.abs(cov)))


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request, capsys):
    """Record one PASS/FAIL line per criterion, echoed live and in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(label: str, checks: list[tuple[str, bool, str]]) -> bool:
        passed = all(ok for _, ok, _ in checks)
        detail = "; ".join(f"{name} {'ok' if ok else 'FAIL'} ({value})" for name, ok, value in checks)
        line = f"{label} {'PASS' if passed else 'FAIL'}: {detail}"
        lines.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
