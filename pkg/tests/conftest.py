import pytest

from emmerger.synth import SceneSpec, generate_scene

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def record_criterion():
    """Log one acceptance criterion outcome for the end-of-run summary."""

    def _record(name: str, passed: bool, detail: str = "") -> None:
        _ACCEPTANCE.append((name, bool(passed), detail))

    return _record


@pytest.fixture(scope="session")
def grid_scene():
    spec = SceneSpec()
    gt, w, h = generate_scene(spec)
    return spec, gt, w, h


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(_ACCEPTANCE, key=lambda r: int(r[0].split()[0][1:])):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
