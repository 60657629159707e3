import pytest

_RESULTS = {}


class Recorder:
    """Collects one verdict per acceptance criterion for the terminal summary."""

    def __call__(self, number, ok, detail):
        prev = _RESULTS.get(number)
        # a criterion split over several tests passes only if all parts pass
        ok = bool(ok) and (prev is None or prev[0])
        detail = detail if prev is None else f"{prev[1]}; {detail}"
        _RESULTS[number] = (ok, detail)
        return bool(ok)


@pytest.fixture
def criterion():
    return Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        ok, detail = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
