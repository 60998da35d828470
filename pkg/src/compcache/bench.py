"""Benchmark scenarios, suite runner and request sweep."""

from __future__ import annotations

import copy
import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import baselines, greedy, oracle, relax, rounding
from .errors import CompcacheError, Infeasible, InfeasibleInput, NonConvergence
from .instances import TABLE2_GLOBALS, TABLE2_NODE, table2_tree
from .model import GlobalParams, TreeNetwork, load_instance
from .solution import Solution, reevaluate

SOLVERS = ("proposed", "greedy", "oracle", "ga")
RESULT_FIELDS = ("scenario", "solver", "seed", "status", "objective", "iterations", "feasible")
REVALIDATE_RTOL = 1e-9
HETEROGENEOUS_SHAPES = (7, 15, 31, 67)


@dataclass
class Scenario:
    name: str
    topology: dict[str, Any]  # tree description including its "global" block
    solvers: list[str] = field(default_factory=lambda: list(SOLVERS))
    seeds: list[int] = field(default_factory=lambda: [0])
    settings: dict[str, Any] = field(default_factory=dict)
    grid_levels: int = oracle.DEFAULT_GRID
    generator: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.solvers) - set(SOLVERS)
        if unknown:
            raise ValueError(f"unknown solvers {sorted(unknown)}")

    def instance(self) -> tuple[TreeNetwork, GlobalParams]:
        return load_instance(self.topology)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        return cls(**json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class RunRecord:
    scenario: str
    solver: str
    seed: int
    status: str  # ok, infeasible, nonconvergence, error
    objective: float
    iterations: int
    feasible: bool
    wall_time: float = 0.0
    message: str = ""

    @property
    def run_id(self) -> str:
        return f"{self.scenario}_{self.solver}_{self.seed}"


def generate_homogeneous(depth: int) -> Scenario:
    if depth not in (2, 3, 4, 5):
        raise ValueError("depth must be one of 2, 3, 4, 5")
    net = table2_tree(depth)
    return Scenario(
        name=f"bt{net.num_nodes}",
        topology=net.to_spec(TABLE2_GLOBALS),
        generator={"kind": "homogeneous", "depth": depth},
    )


def _shape_parents(n_nodes: int) -> list[int | None]:
    """Parent list for the fixed heterogeneous shapes (breadth-first ids)."""
    if n_nodes in (7, 15, 31):
        return [None] + [(v - 1) // 2 for v in range(1, n_nodes)]
    if n_nodes == 67:
        # fan-out 2, 2, 3, 4 by level: 1 + 2 + 4 + 12 + 48 nodes
        parents: list[int | None] = [None]
        level, nxt = [0], 1
        for fan in (2, 2, 3, 4):
            new = []
            for p in level:
                for _ in range(fan):
                    parents.append(p)
                    new.append(nxt)
                    nxt += 1
            level = new
        return parents
    raise ValueError(f"heterogeneous shape must be one of {HETEROGENEOUS_SHAPES}")


def generate_heterogeneous(n_nodes: int, seed: int) -> Scenario:
    """Benchmark shape with per-node capacities in [101, 120] and energies within 20% of nominal."""
    parents = _shape_parents(n_nodes)
    rng = np.random.default_rng(seed)
    has_child = {p for p in parents if p is not None}
    nodes = []
    for v, p in enumerate(parents):
        leaf = v not in has_child
        nodes.append({
            "id": v,
            "parent": p,
            "eps_rx": TABLE2_NODE["eps_rx"] * float(rng.uniform(0.8, 1.2)),
            "eps_tx": TABLE2_NODE["eps_tx"] * float(rng.uniform(0.8, 1.2)),
            "eps_cp": TABLE2_NODE["eps_cp"] * float(rng.uniform(0.8, 1.2)),
            "cache_capacity": 100.0 + float(rng.uniform(1.0, 20.0)),
            "data_volume": TABLE2_NODE["data_volume"] if leaf else 0.0,
            "request_count": TABLE2_NODE["request_count"] if leaf else 0.0,
        })
    g = TABLE2_GLOBALS
    topology = {
        "nodes": nodes,
        "edge_latency": TABLE2_NODE["latency"],
        "global": {"w_ca": g.w_ca, "period": g.period, "energy_budget": g.energy_budget},
    }
    return Scenario(
        name=f"het{n_nodes}_s{seed}",
        topology=topology,
        generator={"kind": "heterogeneous", "nodes": n_nodes, "seed": seed, "energy_spread": 0.2},
    )


def solve(net, globals_, solver: str, seed: int, settings: dict | None = None, grid_levels=oracle.DEFAULT_GRID) -> Solution:
    settings = dict(settings or {})
    if solver == "proposed":
        return rounding.round_full_pipeline(net, globals_, relax.SolverSettings(seed=seed, **settings))
    if solver == "greedy":
        return greedy.greedy_solve(net, globals_, grid_levels)
    if solver == "oracle":
        return oracle.brute_force(net, globals_, grid_levels).best_solution
    if solver == "ga":
        return baselines.ga_solve(net, globals_, baselines.GaSettings(seed=seed, **settings.get("ga", {})))
    raise ValueError(f"unknown solver {solver!r}")


def _solver_settings(scenario: Scenario, solver: str) -> dict:
    if solver == "proposed":
        return {k: v for k, v in scenario.settings.items() if k != "ga"}
    if solver == "ga":
        return {"ga": scenario.settings.get("ga", {})}
    return {}


def run_one(scenario: Scenario, solver: str, seed: int, out_dir: Path | None = None) -> RunRecord:
    net, glob = scenario.instance()
    t0 = time.perf_counter()
    status, message, sol = "ok", "", None
    try:
        sol = solve(net, glob, solver, seed, _solver_settings(scenario, solver), scenario.grid_levels)
    except NonConvergence as exc:
        status, message = "nonconvergence", str(exc)
    except CompcacheError as exc:
        infeasible = isinstance(exc, (Infeasible, InfeasibleInput))
        status, message = ("infeasible" if infeasible else "error"), str(exc)
    wall = time.perf_counter() - t0
    if sol is None:
        return RunRecord(scenario.name, solver, seed, status, float("nan"), 0, False, wall, message)

    record = RunRecord(
        scenario.name, solver, seed, status, sol.gain, sol.iterations, sol.feasible, wall, message
    )
    if out_dir is not None:
        plan_dir = out_dir / "plans"
        plan_dir.mkdir(parents=True, exist_ok=True)
        plan_path = plan_dir / f"{record.run_id}.json"
        sol.save(plan_path)
        check = reevaluate(net, glob, plan_path)
        if not np.isclose(check.gain, sol.gain, rtol=REVALIDATE_RTOL, atol=0.0):
            raise RuntimeError(f"{record.run_id}: stored plan re-evaluates to {check.gain!r}")
        trace = sol.trace
        if trace is not None and hasattr(trace, "write_csv"):
            trace.write_csv(out_dir / f"trace_{record.run_id}.csv")
    return record


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_results(records: Iterable[RunRecord], out_dir: Path) -> None:
    records = list(records)
    with open(out_dir / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for r in records:
            w.writerow([_fmt(getattr(r, f)) for f in RESULT_FIELDS])
    with open(out_dir / "timings.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "solver", "seed", "wall_time"])
        for r in records:
            w.writerow([r.scenario, r.solver, r.seed, f"{r.wall_time:.6f}"])


def read_results(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_suite(
    scenarios: Iterable[Scenario],
    solvers: Iterable[str] | None = None,
    out_dir: str | Path | None = None,
    seeds: Iterable[int] | None = None,
) -> list[RunRecord]:
    """Run every (scenario, solver, seed) in that order; failures become records."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    records = []
    for sc in scenarios:
        for solver in (list(solvers) if solvers is not None else sc.solvers):
            for seed in (list(seeds) if seeds is not None else sc.seeds):
                records.append(run_one(sc, solver, seed, out))
    if out is not None:
        write_results(records, out)
    return records


def with_requests(scenario: Scenario, r: float) -> Scenario:
    topo = copy.deepcopy(scenario.topology)
    net, _ = scenario.instance()
    leaves = set(net.leaves)
    if not all(isinstance(n["id"], int) for n in topo["nodes"]):
        raise ValueError("request sweep needs integer node ids")
    for n in topo["nodes"]:
        if n["id"] in leaves:
            n["request_count"] = float(r)
    return Scenario(
        name=f"{scenario.name}_R{r:g}", topology=topo, solvers=["proposed"],
        seeds=list(scenario.seeds), settings=dict(scenario.settings),
        grid_levels=scenario.grid_levels, generator=dict(scenario.generator),
    )


def sweep_requests(
    scenario: Scenario, r_values: Iterable[float], out_path: str | Path | None = None, seed: int = 0
) -> list[tuple[float, float]]:
    """Proposed-pipeline gain with every leaf's request count set to each ``R``."""
    r_values = list(r_values)
    if not r_values:
        raise ValueError("r_values must be nonempty")
    if any(b <= a for a, b in zip(r_values, r_values[1:])):
        raise ValueError("r_values must be ascending")
    rows = []
    for r in r_values:
        sc = with_requests(scenario, r)
        rec = run_one(sc, "proposed", seed)
        rows.append((float(r), rec.objective))
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["R", "gain"])
            for r, gval in rows:
                w.writerow([repr(r), repr(gval)])
    return rows
