import numpy as np
import pytest

from xaicyclegan.autograd import Tensor


def rel_linf(a, b) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    scale = max(np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def t64(rng, *shape, requires_grad=True):
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_criteria: dict[int, tuple[str, bool]] = {}
_details: dict[int, list[str]] = {}


@pytest.fixture
def note(request):
    """note("...") attaches a measured value to the test's criterion line."""
    marker = request.node.get_closest_marker("criterion")
    n = marker.args[0] if marker else 0
    return lambda text: _details.setdefault(n, []).append(text)


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None or report.when == "teardown":
        return
    if report.when == "call" or report.failed:
        n, text = marker
        prev = _criteria.get(n, (text, True))[1]
        _criteria[n] = (text, prev and report.passed)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        text, ok = _criteria[n]
        extra = "; ".join(_details.get(n, []))
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {text}" + (f" ({extra})" if extra else ""))
