from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from platform_fixture import FixturePlatform  # noqa: E402


@pytest.fixture
def platform(tmp_path) -> FixturePlatform:
    return FixturePlatform.build(tmp_path / "store", n_images=6, seed=20260809)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and report.when == "call":
        name = marker.kwargs.get("name", item.name)
        status = "PASS" if report.passed else "FAIL"
        writer = item.config.pluginmanager.get_plugin("terminalreporter")
        if writer is not None:
            writer.write_line(f"[{status}] {name}")
