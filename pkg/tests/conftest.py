import pytest

CRITERIA = {
    1: "correction factors s(500), s(1000)",
    2: "control condition E[1/m0_hat^(1)] <= 1/m0",
    3: "chi-square identity E[2/X] = 1/m0",
    4: "counterexample fdr1 > fdr2 with closed forms",
    5: "independent-case FDR control",
    6: "power ordering against BH95 and ORC",
    7: "dependence: STS overshoot, BH95/BKY control",
    8: "step-down r <= step-up r",
    9: "IBH rejects at least as many as BH95",
    10: "real-data tables (excluded; pipeline smoke)",
}

_results = {}


@pytest.fixture
def record():
    """Store the verdict of an acceptance criterion for the summary."""

    def _record(number, ok, detail, status=None):
        _results[number] = (status or ("PASS" if ok else "FAIL"), detail)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in CRITERIA.items():
        status, detail = _results.get(number, ("FAIL", "no result recorded"))
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {title} :: {detail}")
