import numpy as np
import pytest


def central_diff(f, x: np.ndarray, idx, h=1e-5) -> float:
    """d f / d x[idx] by central differences; restores x afterwards."""
    old = x[idx]
    x[idx] = old + h
    fp = f()
    x[idx] = old - h
    fm = f()
    x[idx] = old
    return (fp - fm) / (2 * h)


def rel_err(a, b, floor=1e-10) -> float:
    a, b = float(a), float(b)
    denom = max(abs(a), abs(b))
    if denom < floor:
        return 0.0
    return abs(a - b) / denom


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary: one line per criterion at the end of the run ----------

_ACCEPTANCE: dict = {}


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.rsplit("::", 1)[1]
    detail = dict(report.user_properties).get("detail", "")
    _ACCEPTANCE[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda n: int(n.split("_")[2])):
        status, detail = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{status} {name}: {detail}")
