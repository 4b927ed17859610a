import numpy as np
import pytest

from pixseq.vocab import VocabConfig, build_vocabulary

_ACCEPTANCE: list[tuple[str, str]] = []


@pytest.fixture
def full_vocab():
    return build_vocabulary(VocabConfig(num_coord_bins=1000, num_classes=80, num_text_tokens=32000, keypoint_count=14))


@pytest.fixture
def toy_vocab():
    return build_vocabulary(VocabConfig(num_coord_bins=64, num_classes=3, num_text_tokens=256, keypoint_count=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE:
        terminalreporter.write_line(f"{outcome}  {name}")
