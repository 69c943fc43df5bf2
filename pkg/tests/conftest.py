from __future__ import annotations

import time
from pathlib import Path

import pytest

from semmap.geometry import CameraModel
from semmap.pipeline import load_config, run_pipeline

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"
FIXTURES_DIR = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture(scope="session")
def cam() -> CameraModel:
    return CameraModel()


@pytest.fixture(scope="session")
def scenario_dir() -> Path:
    return SCENARIOS


class _Runs:
    """Runs each scenario at most once per test session."""

    def __init__(self, base: Path):
        self.base = base
        self._cache: dict = {}
        self.seconds: dict[str, float] = {}

    def __call__(self, name: str):
        if name not in self._cache:
            t0 = time.perf_counter()
            cfg = load_config(SCENARIOS / f"{name}.json")
            self._cache[name] = run_pipeline(cfg, self.base / name)
            self.seconds[name] = time.perf_counter() - t0
        return self._cache[name]


@pytest.fixture(scope="session")
def scenario_run(tmp_path_factory):
    return _Runs(tmp_path_factory.mktemp("runs"))


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    """Remember a criterion verdict and echo it; the summary is printed at session end."""
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"ACCEPTANCE {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
