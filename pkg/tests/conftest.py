from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
CORPUS = ROOT / "corpora" / "stdlib_docs.txt"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def corpus():
    from basis.data import load_char_corpus

    return load_char_corpus(CORPUS)


def dense_sketch_oracle(bins, signs, rank):
    """S built entry by entry, independent of the segment-sum kernel."""
    S = np.zeros((rank, len(bins)))
    for b, (h, s) in enumerate(zip(bins, signs)):
        for r in range(rank):
            S[r, b] = s if h == r else 0.0
    return S


_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        if report.passed:
            status = "PASS"
        elif hasattr(report, "wasxfail"):
            status = "FAIL (known, xfail)"
        else:
            status = "FAIL"
        measured = dict(report.user_properties).get("measured", "")
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], status, measured))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance")
    for name, status, measured in _ACCEPTANCE:
        terminalreporter.write_line(f"{status:<20} {name}  {measured}")
