"""Greedy local search over single-leaf cache relocations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cost, oracle, relax
from .errors import Infeasible, TerminationCapHit
from .model import CachePlan, CompressionPlan, GlobalParams, TreeNetwork
from .solution import Solution

REFINE_MAX_RATES = 64  # SQP per candidate gets slow beyond this many rates


@dataclass(frozen=True)
class GreedyStep:
    """Accepted move: leaf ``leaf`` now caches at ``position`` (``None`` = nowhere)."""

    leaf: int | None
    position: int | None
    gain: float


def _arrays_for(net: TreeNetwork, states: list[int]) -> np.ndarray:
    return oracle._plan_arrays(net, np.array([states], dtype=int))[0]


def _evaluate(net, globals_, candidates: list[list[int]], grid_levels: int, refine: int):
    """Rates and gain for each candidate state vector (-inf if infeasible).

    Every candidate gets grid rates; the ``refine`` best by grid gain are
    then improved by SQP.
    """
    b = oracle._plan_arrays(net, np.array(candidates, dtype=int))
    delta, gain, feasible = oracle.optimize_rates_batch(net, globals_, b, grid_levels)
    gain = np.where(feasible, gain, -np.inf)
    if refine > 0:
        settings = relax.SolverSettings()
        top = np.argsort(-gain, kind="stable")[:refine]
        for p in top[np.isfinite(gain[top])]:
            delta[p], gain[p] = oracle._refine(net, globals_, b[p], delta[p], settings)
    return delta, gain


def greedy_solve(
    net: TreeNetwork,
    globals_: GlobalParams,
    grid_levels: int = oracle.DEFAULT_GRID,
    max_steps: int = 1000,
    refine: int | None = None,
    history: list[GreedyStep] | None = None,
) -> Solution:
    """Start with every leaf caching its own data and apply the best move until none helps.

    A move changes one leaf's cached position (including "not cached") and
    re-optimises the rates.  If caching at every leaf is already over budget,
    the search starts from the plan with no copies instead.  Ties go to the
    smaller leaf id, then to the position closer to the sink.  ``refine``
    is the number of candidate moves per step whose grid rates are polished
    by SQP before the best move is chosen; by default 8 on trees with at
    most ``REFINE_MAX_RATES`` rate variables and 0 above that.  The final
    plan's rates are always polished once.  Pass a list as ``history`` to
    receive the starting point (``leaf=None``) and every accepted move.
    """
    lay = net.layout
    if refine is None:
        refine = 8 if int(lay.mask.sum()) <= REFINE_MAX_RATES else 0
    states = [int(lay.depth[r]) for r in range(lay.K)]
    delta, gain = _evaluate(net, globals_, [states], grid_levels, refine)
    if not np.isfinite(gain[0]):
        states = [-1] * lay.K
        delta, gain = _evaluate(net, globals_, [states], grid_levels, refine)
        if not np.isfinite(gain[0]):
            raise Infeasible("no feasible rates even without caching")
    cur_delta, cur_gain = delta[0], float(gain[0])
    if history is not None:
        history.append(GreedyStep(None, None, cur_gain))
    tol = oracle.IMPROVEMENT_TOL * max(cost.latency_upper_bound(net), 1.0)

    steps = 0
    while True:
        cands = []
        for r in range(lay.K):
            for s in list(range(int(lay.depth[r]) + 1)) + [-1]:
                if s != states[r]:
                    trial = list(states)
                    trial[r] = s
                    cands.append(trial)
        if not cands:
            break
        delta, gain = _evaluate(net, globals_, cands, grid_levels, refine)
        j = int(np.argmax(gain))
        if not gain[j] > cur_gain + tol:
            break
        steps += 1
        if steps > max_steps:
            raise TerminationCapHit(f"greedy search exceeded {max_steps} accepted moves")
        r = next(i for i, (a, c) in enumerate(zip(states, cands[j])) if a != c)
        states, cur_delta, cur_gain = cands[j], delta[j], float(gain[j])
        if history is not None:
            pos = states[r]
            history.append(GreedyStep(net.leaves[r], None if pos < 0 else pos, cur_gain))

    b = _arrays_for(net, states)
    if refine == 0:
        cur_delta, _ = oracle._refine(net, globals_, b, cur_delta, relax.SolverSettings())
    cache = CachePlan(net, b, "binary")
    return Solution.evaluate(
        net, globals_, CompressionPlan(net, cur_delta), cache, solver="greedy", iterations=steps
    )
