import pytest

import desk

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def desk_network():
    return desk.train_desk_network()


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        props = dict(report.user_properties)
        detail = props.get("detail", "")
        if report.failed and not detail:
            detail = str(report.longrepr).strip().splitlines()[-1]
        label = props.get("criterion", report.nodeid.split("::")[-1])
        _ACCEPTANCE.append((label, "PASS" if report.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome, detail in sorted(_ACCEPTANCE, key=lambda r: int(r[0][2:]) if r[0][2:].isdigit() else 99):
        terminalreporter.write_line(f"{label:<5} {outcome}  {detail}")
