import pytest

_results = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        num, text = mark.args
        prev = _results.get(num, (text, "PASS", []))
        status = "PASS" if rep.passed and prev[1] == "PASS" else "FAIL"
        note = [] if rep.passed else [str(rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash")
                                          else rep.longrepr).splitlines()[0][:160]]
        _results[num] = (text, status, prev[2] + note)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_results):
        text, status, notes = _results[num]
        tr.write_line(f"criterion {num}: {status}  {text}")
        for n in notes:
            tr.write_line(f"    {n}")
