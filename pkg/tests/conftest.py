from collections import defaultdict

CRITERIA = {
    1: "sublinear expectation axioms",
    2: "G-normal endpoints and convergence",
    3: "degenerate band matches classical solver",
    4: "projection operator vs grid oracle",
    5: "deterministic case closed form",
    6: "Picard contraction",
    7: "constraint and flatness contracts",
    8: "uniqueness from two starts",
    9: "window stitching invariance",
    10: "K-process contracts",
    11: "dominated expectation extension",
}

_outcomes = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        name = report.nodeid.split("::", 1)[-1]
        _outcomes[crit].append((name, report.passed))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(CRITERIA):
        results = _outcomes.get(crit)
        if not results:
            continue
        failed = [name for name, ok in results if not ok]
        status = "FAIL" if failed else "PASS"
        tr.write_line(f"criterion {crit:>2} {status}  {CRITERIA[crit]} "
                      f"({len(results) - len(failed)}/{len(results)} checks)")
        for name in failed:
            tr.write_line(f"               failed: {name}")
