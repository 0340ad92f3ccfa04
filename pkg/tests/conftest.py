from __future__ import annotations

from pathlib import Path

import pytest

from scenforge import dsl, normalize, synth

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURES = REPO_ROOT / "fixtures"

SCENARIO_FILES = {
    "straight-1": FIXTURES / "scenarios" / "straight1.yaml",
    "straight-2": FIXTURES / "scenarios" / "straight2.yaml",
    "intersection-1": FIXTURES / "scenarios" / "intersection1.yaml",
    "intersection-2": FIXTURES / "scenarios" / "intersection2.yaml",
    "t-intersection": FIXTURES / "scenarios" / "t_intersection.yaml",
    "curve": FIXTURES / "scenarios" / "curve.yaml",
}

# Distinct violated rules each fixture is built to produce, per seed.
EXPECTED_RULE_COUNTS = {
    "straight-1": 1,
    "straight-2": 2,
    "intersection-1": 3,
    "intersection-2": 3,
    "t-intersection": 2,
    "curve": 2,
}


def load_spec(name: str) -> dsl.ScenarioSpec:
    spec = dsl.parse_dsl(SCENARIO_FILES[name].read_text(encoding="utf-8"))
    assert isinstance(spec, dsl.ScenarioSpec)
    assert dsl.validate_spec(spec) == []
    return spec


def load_template(name: str, seed: int = 0) -> synth.ScenarioTemplate:
    return synth.build_template(normalize.apply_defaults(load_spec(name), seed))


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    return FIXTURES / "accuracy"
