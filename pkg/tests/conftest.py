import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from expmem.core import default_taxonomy  # noqa: E402
from expmem.embeddings import MockEmbeddingProvider  # noqa: E402
from expmem.store import MemoryStore  # noqa: E402


@pytest.fixture
def taxonomy():
    return default_taxonomy()


@pytest.fixture
def store(taxonomy):
    return MemoryStore(taxonomy)


@pytest.fixture
def provider():
    return MockEmbeddingProvider(dimension=64, seed=0)


# ---------------------------------------------------------------- acceptance report

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion this test decides")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[number] = (title, "PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, verdict = _criteria[number]
        terminalreporter.write_line(f"{verdict}  criterion {number}: {title}")
