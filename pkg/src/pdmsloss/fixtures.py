"""Scenario files shipped with the package."""
from importlib import resources

from .parser import Scenario, parse_scenario

EMERGENCY = "emergency.pdms"


def fixture_text(name: str = EMERGENCY) -> str:
    return resources.files("pdmsloss").joinpath("data", name).read_text(encoding="utf-8")


def load_fixture(name: str = EMERGENCY) -> Scenario:
    return parse_scenario(fixture_text(name))


def bundled() -> list:
    return sorted(p.name for p in resources.files("pdmsloss").joinpath("data").iterdir() if p.name.endswith(".pdms"))
