import time

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

SESSION_T0 = time.perf_counter()
_ACCEPTANCE: dict[int, str] = {}


def pytest_collection_modifyitems(config, items):
    # acceptance criteria run last so the runtime criterion sees the whole suite
    items.sort(key=lambda it: it.path.name == "test_acceptance.py")


@pytest.fixture
def report(request):
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(num: int, name: str, ok: bool, detail: str) -> None:
        line = f"[{num:2d}] {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _ACCEPTANCE[num] = line
        if tr is not None:
            tr.write_line("")
            tr.write_line(f"ACCEPTANCE {line}")

    return emit


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[num])
