"""Pipage rounding of relaxed caching decisions and the end-to-end pipeline."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import cost, relax
from .errors import Infeasible, InfeasibleInput, RangeExceedsBox
from .model import CachePlan, CompressionPlan, GlobalParams, TreeNetwork
from .solution import Solution

log = logging.getLogger(__name__)

SNAP = 1e-9
INPUT_RTOL = 1e-6


@dataclass(frozen=True)
class RoundingStep:
    """One pipage move on leaf ``k``: pair ``(j, l)`` or a single entry (``l is None``)."""

    k: int
    j: int
    l: int | None
    kind: str  # "pair", "single", "forced"
    gain_before: float
    gain_after: float
    leaf_sum: float
    fractional_left: int


def _snap(b: np.ndarray, mask: np.ndarray) -> np.ndarray:
    b = np.where(mask, b, 0.0)
    b = np.where(b < SNAP, 0.0, b)
    return np.where(b > 1.0 - SNAP, 1.0, b)


def _fractional(row: np.ndarray, depth: int) -> list[int]:
    return [i for i in range(depth + 1) if 0.0 < row[i] < 1.0]


def _capacity_ok(net, delta, b) -> bool:
    used = cost.cache_usage(net, delta, b)
    return bool(np.all(used <= net.layout.capacity * (1.0 + 1e-9) + 1e-12))


def _check_input(net, globals_, delta, b):
    lay = net.layout
    live = b[lay.mask]
    if np.any(live < -INPUT_RTOL) or np.any(live > 1.0 + INPUT_RTOL):
        raise InfeasibleInput("caching values outside [0, 1]")
    if np.any(np.where(lay.mask, b, 0.0).sum(axis=1) > 1.0 + INPUT_RTOL):
        raise InfeasibleInput("more than one copy for some leaf")
    used = cost.cache_usage(net, delta, b)
    if np.any(used > lay.capacity * (1.0 + INPUT_RTOL) + 1e-12):
        raise InfeasibleInput("cache capacity exceeded")
    W = globals_.energy_budget
    if cost.energy_ub(net, globals_, delta, b) > W * (1.0 + INPUT_RTOL):
        raise InfeasibleInput("energy budget exceeded")


def pipage_round(
    net: TreeNetwork,
    globals_: GlobalParams,
    delta_plan,
    cache_plan,
    *,
    steps: list[RoundingStep] | None = None,
) -> CachePlan:
    """Round a feasible relaxed plan to a binary one, one leaf at a time.

    The two fractional entries closest to the sink are paired and mass is
    moved between them until one reaches 0 or 1, keeping the endpoint with
    the larger gain among those that respect cache capacities.  A leaf with
    a single fractional entry has it set to 1 when capacity and energy allow
    and to 0 otherwise.  If neither pair endpoint fits, the entry whose
    removal costs less gain is dropped to 0.  Pass a list as ``steps`` to
    receive a record of every move.
    """
    lay = net.layout
    delta = cost._arrays(delta_plan)
    b = np.array(cost._arrays(cache_plan), dtype=float)
    _check_input(net, globals_, delta, b)
    b = _snap(np.clip(b, 0.0, 1.0), lay.mask)
    sums = b.sum(axis=1)
    if np.any(sums > 1.0):
        b = b / np.maximum(sums, 1.0)[:, None]
        b = _snap(b, lay.mask)

    def record(r, j, l, kind, before):
        if steps is None:
            return
        frac = int(np.sum((b > 0) & (b < 1)))
        steps.append(RoundingStep(
            k=net.leaves[r], j=j, l=l, kind=kind, gain_before=before,
            gain_after=cost.gain(net, delta, b), leaf_sum=float(b[r].sum()),
            fractional_left=frac,
        ))

    for r in range(lay.K):
        h = int(lay.depth[r])
        while True:
            frac = _fractional(b[r], h)
            if not frac:
                break
            before = cost.gain(net, delta, b)
            if len(frac) == 1:
                j = frac[0]
                up = b.copy()
                up[r, j] = 1.0
                fits = _capacity_ok(net, delta, up) and (
                    cost.energy_ub(net, globals_, delta, up) <= globals_.energy_budget
                )
                b[r, j] = 1.0 if fits and cost.gain(net, delta, up) >= before else 0.0
                record(r, j, None, "single", before)
                continue
            j, l = frac[0], frac[1]
            bj, bl = b[r, j], b[r, l]
            eps1 = min(bj, 1.0 - bl)
            eps2 = min(1.0 - bj, bl)
            cands = []
            # toward the sink first so that equal gains prefer it
            for move in ((bj + eps2, bl - eps2), (bj - eps1, bl + eps1)):
                trial = b.copy()
                trial[r, j], trial[r, l] = move
                trial[r] = _snap(trial[r], lay.mask[r])
                if _capacity_ok(net, delta, trial):
                    cands.append((cost.gain(net, delta, trial), trial))
            if cands:
                best = max(cands, key=lambda c: c[0])  # first wins on ties
                b = best[1]
                record(r, j, l, "pair", before)
                continue
            # both endpoints overflow a cache: drop the cheaper entry
            drops = []
            for i in (j, l):
                trial = b.copy()
                trial[r, i] = 0.0
                drops.append((cost.gain(net, delta, trial), trial))
            b = max(drops, key=lambda c: c[0])[1]
            log.debug("leaf %s: capacity blocks both pipage endpoints, dropped one entry", net.leaves[r])
            record(r, j, l, "forced", before)
    return CachePlan(net, b, "binary")


def epsilon_gain_profile(
    net: TreeNetwork, delta_plan, cache_plan, k: int, j: int, l: int, epsilon_range
) -> np.ndarray:
    """Gain along ``(b_kj - eps, b_kl + eps)`` for each ``eps`` in ``epsilon_range``."""
    if j == l:
        raise ValueError("j and l must differ")
    r = net.leaf_index(k)
    h = net.depth(k)
    if not (0 <= j <= h and 0 <= l <= h):
        raise ValueError(f"positions must lie on the path of leaf {k}")
    delta = cost._arrays(delta_plan)
    b = cost._arrays(cache_plan)
    eps = np.asarray(epsilon_range, dtype=float)
    bj = b[r, j] - eps
    bl = b[r, l] + eps
    tol = 1e-12
    if np.any(bj < -tol) or np.any(bj > 1 + tol) or np.any(bl < -tol) or np.any(bl > 1 + tol):
        raise RangeExceedsBox("epsilon range moves a caching value outside [0, 1]")
    batch = np.repeat(b[None], len(eps), axis=0)
    batch[:, r, j] = bj
    batch[:, r, l] = bl
    return cost.gain_batch(net, delta, batch)


# ---------------------------------------------------------------------------
# Energy repair after rounding


def _repair_energy(net, globals_, delta, b, settings):
    """Move rates toward the energy minimiser for ``b`` until the budget holds.

    Copies are dropped (least gain lost first) while even the minimiser is
    over budget.
    """
    W = globals_.energy_budget
    if cost.energy_ub(net, globals_, delta, b) <= W:
        return delta, b
    lay = net.layout
    b = b.copy()
    while True:
        d_star, e_min = cost.min_energy_rates(net, globals_, b)
        if e_min <= W:
            break
        held = np.argwhere((b == 1.0) & lay.mask)
        if len(held) == 0:
            raise Infeasible("energy budget cannot be met even without caching")
        losses = []
        for r, i in held:
            trial = b.copy()
            trial[r, i] = 0.0
            losses.append(cost.gain(net, d_star, b) - cost.gain(net, d_star, trial))
        r, i = held[int(np.argmin(losses))]
        b[r, i] = 0.0
        log.info("energy repair dropped the copy of leaf %s at position %s", net.leaves[r], i)
    start = np.log(delta)
    target = np.log(d_star)
    lo, hi = 0.0, 1.0
    for _ in range(max(settings.repair_steps, 60)):
        mid = 0.5 * (lo + hi)
        trial = np.exp((1 - mid) * start + mid * target)
        if cost.energy_ub(net, globals_, trial, b) <= W:
            hi = mid
        else:
            lo = mid
    return np.exp((1 - hi) * start + hi * target), b


def round_full_pipeline(
    net: TreeNetwork, globals_: GlobalParams, settings: relax.SolverSettings | None = None
) -> Solution:
    """Relax, alternate, round, repair energy, then re-optimise the rates."""
    settings = settings or relax.SolverSettings()
    delta_plan, relaxed, trace = relax.solve_master_slave(net, globals_, settings)
    steps: list[RoundingStep] = []
    binary = pipage_round(net, globals_, delta_plan, relaxed, steps=steps)
    delta, b = _repair_energy(net, globals_, delta_plan.values, binary.values, settings)
    delta = np.clip(delta, relax.DELTA_MIN, 1.0)
    tau, inner, _ = relax._compression_step(net, globals_, b, settings, start=delta)
    polished = np.exp(tau)
    if cost.gain(net, polished, b) >= cost.gain(net, delta, b):
        delta = polished
    sol = Solution.evaluate(
        net,
        globals_,
        CompressionPlan(net, np.clip(delta, relax.DELTA_MIN, 1.0)),
        CachePlan(net, b, "binary"),
        solver="proposed",
        iterations=trace.iterations,
        trace=trace,
    )
    if not sol.feasible:
        raise Infeasible(f"rounded solution infeasible: {sol.report.violations()}")
    return sol
