"""Evaluated solution record shared by all solvers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import cost
from .model import CachePlan, CompressionPlan, FeasibilityReport, GlobalParams, TreeNetwork


@dataclass(frozen=True, eq=False)
class Solution:
    delta: CompressionPlan
    cache: CachePlan
    gain: float
    latency: float
    energy: float
    report: FeasibilityReport
    solver: str = ""
    iterations: int = 0
    trace: Any = field(default=None, repr=False)

    @classmethod
    def evaluate(cls, net, globals_, delta, cache, *, solver="", iterations=0, trace=None) -> "Solution":
        return cls(
            delta=delta,
            cache=cache,
            gain=cost.gain(net, delta, cache),
            latency=cost.latency(net, delta, cache),
            energy=cost.energy_ub(net, globals_, delta, cache),
            report=cost.check_feasibility(net, globals_, delta, cache),
            solver=solver,
            iterations=iterations,
            trace=trace,
        )

    @property
    def feasible(self) -> bool:
        return self.report.feasible

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready form; rates and caching keyed by ``"leaf,position"``."""
        return {
            "solver": self.solver,
            "gain": self.gain,
            "latency": self.latency,
            "energy": self.energy,
            "feasible": self.feasible,
            "iterations": self.iterations,
            "delta": {f"{k},{i}": v for (k, i), v in self.delta.to_mapping().items()},
            "cache": {f"{k},{i}": v for (k, i), v in self.cache.to_mapping().items()},
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))


def load_plans(net: TreeNetwork, source: str | Path | dict) -> tuple[CompressionPlan, CachePlan]:
    """Rebuild the plans stored by :meth:`Solution.save`."""
    data = source if isinstance(source, dict) else json.loads(Path(source).read_text())

    def parse(d):
        return {tuple(int(x) for x in key.split(",")): float(v) for key, v in d.items()}

    delta = CompressionPlan.from_mapping(net, parse(data["delta"]))
    cache_map = parse(data["cache"])
    vals = np.array(list(cache_map.values()) or [0.0])
    mode = "binary" if np.all((vals == 0.0) | (vals == 1.0)) else "relaxed"
    return delta, CachePlan.from_mapping(net, cache_map, mode)


def reevaluate(net: TreeNetwork, globals_: GlobalParams, source) -> Solution:
    delta, cache = load_plans(net, source)
    return Solution.evaluate(net, globals_, delta, cache)
