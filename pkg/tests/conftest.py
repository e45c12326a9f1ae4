import pytest

from vargrad.config import RunConfig
from vargrad.core import GateConfig
from vargrad.optim import OptimizerConfig


@pytest.fixture
def small_run():
    """A seconds-scale logistic-regression run."""
    return RunConfig(workers=3, batch_size=8, epochs=2, seed=7, codec="basic",
                     gate=GateConfig(alpha=1.5),
                     optimizer=OptimizerConfig("momentum", 0.05, 0.9),
                     dataset={"n_samples": 600, "n_features": 10})


# one line per acceptance criterion at the end of the run
_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    number, title = marker.args
    ok = call.excinfo is None
    prev = _criteria.get(number, (title, True))
    _criteria[number] = (title, prev[1] and ok)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title}")
