import pytest

# criterion number -> list of (part, passed, detail)
_ACCEPTANCE: dict = {}


@pytest.fixture
def record():
    """Record one acceptance sub-check; returns ``passed`` for use in an assert."""

    def _record(criterion: int, part: str, passed: bool, detail: str = "") -> bool:
        _ACCEPTANCE.setdefault(criterion, []).append((part, bool(passed), detail))
        return bool(passed)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[crit]
        status = "PASS" if all(p for _, p, _ in parts) else "FAIL"
        body = "; ".join(f"{name} {'ok' if p else 'FAIL'} [{detail}]" for name, p, detail in parts)
        terminalreporter.write_line(f"criterion {crit:2d}: {status}  {body}")
