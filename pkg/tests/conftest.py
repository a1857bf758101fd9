"""Shared pytest config: prints one summary line per acceptance criterion."""

CRITERIA = {
    "test_criterion_1": "critical point of the bounded logit function",
    "test_criterion_2": "label smoothing / logit squeezing fixed points",
    "test_criterion_3": "divergence vs finite-optimum evidence",
    "test_criterion_4": "finite-difference gradient integrity",
    "test_criterion_5": "attack ball/box invariants and estimator quality",
    "test_criterion_6": "desk-scale bounded-vs-unbounded logit replication",
    "test_criterion_7": "operator norms and loss-surface instruments",
    "test_criterion_8": "byte-identical reproducibility",
}

_results: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    name = report.nodeid.split("::")[-1]
    for prefix in CRITERIA:
        if name.startswith(prefix):
            _results[prefix] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for prefix, label in CRITERIA.items():
        status = _results.get(prefix)
        if status:
            number = prefix.removeprefix("test_criterion_")
            terminalreporter.write_line(f"criterion {number} ({label}): {status}")
