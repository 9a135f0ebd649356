import pytest

_VERDICTS: list = []


class CriterionRecorder:
    """Collects one PASS/FAIL line per acceptance criterion."""

    def __init__(self, capsys):
        self._capsys = capsys

    def record(self, number, title: str, passed: bool, detail: str) -> None:
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} | {detail}"
        _VERDICTS.append(line)
        with self._capsys.disabled():
            print(f"\n{line}")
        assert passed, line


@pytest.fixture
def criterion(capsys):
    return CriterionRecorder(capsys)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
