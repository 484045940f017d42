import sys
from collections import defaultdict
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))
torch.set_num_threads(1)

# criterion number -> (title, list of outcomes); filled by the report hook below
_CRITERIA: dict[int, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-minute training runs")
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, title = mark.args
        _CRITERIA.setdefault(number, (title, []))[1].append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[number]
        counts = defaultdict(int)
        for o in outcomes:
            counts[o] += 1
        status = "PASS" if counts["passed"] == len(outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {number} {status}: {title} "
                                    f"({counts['passed']}/{len(outcomes)} checks passed)")


@pytest.fixture
def rng():
    return torch.Generator().manual_seed(1234)
