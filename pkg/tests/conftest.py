import pathlib

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
SCENARIO_DIR = ROOT / "scenarios"
FIXTURE_DIR = ROOT / "fixtures"


@pytest.fixture(scope="session")
def scenario_text():
    def _load(name: str) -> str:
        return (SCENARIO_DIR / name).read_text(encoding="utf-8")

    return _load


@pytest.fixture(scope="session")
def fixture_dir():
    return FIXTURE_DIR
