import pytest

# (criterion number, title, passed, detail) rows filled in by test_acceptance
ACCEPTANCE = []


@pytest.fixture
def record():
    def _record(number, title, passed, detail):
        ACCEPTANCE.append((number, title, bool(passed), detail))
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        print(line)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
