import numpy as np
import pytest

from photoperceptron.temporal_modes import default_grid, hermite_gaussian_basis, superpose


@pytest.fixture(scope="session")
def grid():
    return default_grid(1.0)


@pytest.fixture(scope="session")
def basis(grid):
    return hermite_gaussian_basis(6, grid)


def random_mode(rng, basis, k=None):
    k = len(basis) if k is None else k
    c = rng.normal(size=k) + 1j * rng.normal(size=k)
    c /= np.linalg.norm(c)
    return superpose(basis[:k], c)


_criteria: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "detail": ""})
    entry["ok"] = entry["ok"] and rep.passed
    detail = dict(item.user_properties).get("detail")
    if detail:
        entry["detail"] = detail


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {number} {status}: {e['title']}  {e['detail']}")
