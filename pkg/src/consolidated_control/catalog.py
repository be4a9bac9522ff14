"""Builtin constraint sets and shipped scenarios."""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Any, Dict, List, Tuple

from .constraints import ConstraintSet, Consolidation
from .scenario_io import build_constraints, build_scenario, loads_document
from .sim import Scenario

SCENARIOS = ("scenario_a_outside", "scenario_a_inside", "scenario_b_case_a", "scenario_b_case_b")


@dataclass(frozen=True)
class CatalogSet:
    """A named constraint set with its region of interest and a time window."""

    name: str
    doc: Dict[str, Any]
    n: int
    nu: float
    box: Tuple[Tuple[float, float], ...]
    t_range: Tuple[float, float]

    def constraint_set(self) -> ConstraintSet:
        return build_constraints(self.doc, self.n)

    def consolidation(self, nu: float = None) -> Consolidation:
        return Consolidation(self.constraint_set(), self.nu if nu is None else nu)


_SETS: Dict[str, Dict[str, Any]] = {
    # coupled funnel, lower-bounded and upper-bounded outputs (bounded region)
    "example_1": dict(
        n=2, nu=2.0, box=((-3.0, 3.0), (-5.0, 5.0)), t_range=(0.0, 1.0),
        doc={"constraints": [
            {"kind": "funnel", "name": "h1", "channel": "x1", "lower": -2, "upper": 2},
            {"kind": "lower", "name": "h2", "channel": "-x1 + x2", "lower": -2},
            {"kind": "upper", "name": "h3", "channel": "0.3*x1^2 + x2", "upper": 4},
        ]}),
    # two decoupled funnels
    "example_2": dict(
        n=2, nu=2.0, box=((-4.0, 3.0), (-3.0, 6.0)), t_range=(0.0, 1.0),
        doc={"constraints": [
            {"kind": "funnel", "name": "h1", "channel": "x1", "lower": -3, "upper": 2},
            {"kind": "funnel", "name": "h2", "channel": "0.3*x1^2 - x2", "lower": -2,
             "upper": 2},
        ]}),
    # example 2 with a moving, reshaping second output; profiles pass through
    # the snapshots at t = 0, 1, 2
    "example_3": dict(
        n=2, nu=2.0, box=((-5.0, 20.0), (-12.0, 8.0)), t_range=(0.0, 2.0),
        doc={"params": {"c1": "0.3 - 0.3*t", "o1": "5.5*t + 0.5*t^2"},
             "constraints": [
                 {"kind": "funnel", "name": "h1", "channel": "x1", "lower": "-3 + 7*t",
                  "upper": "2 + 7*t"},
                 {"kind": "funnel", "name": "h2", "channel": "c1*(x1 - o1)^2 - x2",
                  "lower": -2, "upper": 2},
             ]}),
    # ring 9 < |x|^2 < 16: alpha has a local minimum at the origin
    "annulus": dict(
        n=2, nu=2.0, box=((-5.0, 5.0), (-5.0, 5.0)), t_range=(0.0, 1.0),
        doc={"constraints": [
            {"kind": "funnel", "name": "h1", "channel": "x1^2 + x2^2", "lower": 9,
             "upper": 16},
        ]}),
}


def set_names() -> List[str]:
    return list(_SETS)


def catalog_set(name: str) -> CatalogSet:
    if name in _SETS:
        e = _SETS[name]
        return CatalogSet(name, e["doc"], e["n"], e["nu"], e["box"], e["t_range"])
    if name in SCENARIOS:
        doc = scenario_document(name)
        box = tuple(tuple(b) for b in doc["oracle"]["box"])
        horizon = float(doc["integration"]["horizon"])
        return CatalogSet(name, {"params": doc.get("params", {}),
                                 "constraints": doc["constraints"]},
                          2, float(doc["consolidation"]["nu"]), box, (0.0, horizon))
    raise KeyError(f"unknown catalog entry {name!r}")


def scenario_text(name: str) -> str:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}")
    return resources.files(__package__).joinpath("scenarios", f"{name}.yaml").read_text()


def scenario_document(name: str) -> Dict[str, Any]:
    return loads_document(scenario_text(name))


def scenario(name: str) -> Scenario:
    return build_scenario(scenario_document(name))
