"""Command line entry point: ``compcache {gen,run,sweep,oracle,check}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench, oracle
from .bench import Scenario
from .errors import CompcacheError
from .solution import reevaluate


def _scenario(path: str) -> Scenario:
    data = json.loads(Path(path).read_text())
    if "topology" in data:
        return Scenario(**data)
    # a bare topology file: wrap it with default solver settings
    return Scenario(name=Path(path).stem, topology=data)


def cmd_gen(args) -> int:
    if args.kind == "homogeneous":
        sc = bench.generate_homogeneous(args.depth)
    else:
        sc = bench.generate_heterogeneous(args.nodes, args.seed)
    if args.solver:
        sc.solvers = list(args.solver)
    out = Path(args.out) if args.out else Path(f"{sc.name}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    sc.save(out)
    print(out)
    return 0


def cmd_run(args) -> int:
    sc = _scenario(args.scenario)
    if args.grid_levels:
        sc.grid_levels = args.grid_levels
    seeds = [args.seed] if args.seed is not None else None
    records = bench.run_suite([sc], args.solver or None, args.out, seeds)
    for r in records:
        print(f"{r.scenario}\t{r.solver}\tseed={r.seed}\t{r.status}\t{r.objective!r}\t{r.wall_time:.3f}s")
    return 0


def cmd_sweep(args) -> int:
    sc = _scenario(args.scenario)
    r_values = [float(x) for x in args.r_values.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = bench.sweep_requests(sc, r_values, out / "sweep.csv", seed=args.seed or 0)
    for r, g in rows:
        print(f"R={r:g}\tgain={g!r}")
    return 0


def cmd_oracle(args) -> int:
    sc = _scenario(args.scenario)
    net, glob = sc.instance()
    try:
        res = oracle.brute_force(net, glob, args.grid_levels or sc.grid_levels)
    except CompcacheError as exc:
        print(f"oracle: {type(exc).__name__}: {exc}")
        return 0
    sol = res.best_solution
    print(f"gain={sol.gain!r} configurations={res.configurations_examined} "
          f"upper_bound={res.upper_bound!r} positions={sol.cache.positions()}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        sol.save(out / f"{sc.name}_oracle.json")
    return 0


def cmd_check(args) -> int:
    sc = _scenario(args.scenario)
    net, glob = sc.instance()
    sol = reevaluate(net, glob, args.plan)
    rep = sol.report
    print(f"gain={sol.gain!r} latency={sol.latency!r} energy={sol.energy!r} feasible={sol.feasible}")
    for v in rep.violations():
        print(f"violation: {v}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="compcache", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("--scenario", required=True, help="scenario or topology JSON file")
        sp.add_argument("--solver", action="append", choices=bench.SOLVERS)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--grid-levels", type=int)

    g = sub.add_parser("gen", help="write a benchmark scenario file")
    common(g, scenario=False)
    g.add_argument("--kind", choices=("homogeneous", "heterogeneous"), default="homogeneous")
    g.add_argument("--depth", type=int, default=2)
    g.add_argument("--nodes", type=int, default=7, choices=bench.HETEROGENEOUS_SHAPES)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run solvers and write results.csv")
    common(r)
    r.set_defaults(func=cmd_run, out="results")

    s = sub.add_parser("sweep", help="gain versus request count")
    common(s)
    s.add_argument("--r-values", default="200,400,600,800,1000")
    s.set_defaults(func=cmd_sweep, out="sweep")

    o = sub.add_parser("oracle", help="exhaustive search on a small instance")
    common(o)
    o.set_defaults(func=cmd_oracle)

    c = sub.add_parser("check", help="re-evaluate a stored plan")
    common(c)
    c.add_argument("--plan", required=True)
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except Exception as exc:  # internal error
        print(f"compcache: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
