"""Exhaustive baseline for small instances.

Every binary cache plan is enumerated and, for each one, the rates are
optimised by coordinate descent over a log-spaced grid.  Descent runs in
lockstep over a batch of cache plans; each plan's trajectory is independent
of the others, so batching changes speed only.

Single-coordinate moves stall once the energy budget binds (the first rate
visited absorbs the whole budget), so grid points are refined by SQP.  To
keep that affordable, every cache plan also gets a Lagrangian upper bound on
its gain; plans whose bound cannot beat the incumbent are never refined.
The largest bound over all plans certifies how far the result can be from
the true optimum.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import cost, relax
from .errors import Infeasible, InstanceTooLarge
from .model import DELTA_MIN, CachePlan, CompressionPlan, GlobalParams, TreeNetwork
from .solution import Solution

DEFAULT_CAP = 10**6
DEFAULT_GRID = 50
IMPROVEMENT_TOL = 1e-9
# upper bound on floats held by one candidate batch
_BATCH_BUDGET = 4_000_000


@dataclass(frozen=True)
class OracleResult:
    best_solution: Solution
    configurations_examined: int
    grid_resolution: int
    upper_bound: float = float("inf")
    refined: int = 0


def rate_grid(levels: int) -> np.ndarray:
    if levels < 2:
        raise ValueError("grid_levels must be >= 2")
    return np.geomspace(DELTA_MIN, 1.0, levels)


def count_cache_plans(net: TreeNetwork) -> int:
    return int(np.prod([net.depth(k) + 2 for k in net.leaves], dtype=object))


def _position_states(net: TreeNetwork):
    # -1 means "not cached"; listed first so that product order is lexicographic
    return [range(-1, net.depth(k) + 1) for k in net.leaves]


def enumerate_cache_plans(net: TreeNetwork, cap: int = DEFAULT_CAP) -> Iterator[CachePlan]:
    """Yield every binary plan with at most one copy per leaf, in lexicographic order."""
    if count_cache_plans(net) > cap:
        raise InstanceTooLarge(f"{count_cache_plans(net)} cache plans exceed cap {cap}")
    for combo in itertools.product(*_position_states(net)):
        yield CachePlan.at_positions(
            net, {k: (None if i < 0 else i) for k, i in zip(net.leaves, combo)}
        )


def _plan_arrays(net: TreeNetwork, combos: np.ndarray) -> np.ndarray:
    """Binary arrays ``(n, K, H+1)`` from position codes ``(n, K)``."""
    lay = net.layout
    b = np.zeros((len(combos), lay.K, lay.H + 1))
    n_idx, r_idx = np.nonzero(combos >= 0)
    b[n_idx, r_idx, combos[n_idx, r_idx]] = 1.0
    return b


class _RowModel:
    """Per-leaf contributions to gain, energy and cache usage.

    Changing one rate only touches one leaf's row, so candidates are scored
    by swapping that row's contribution in and out of running totals.
    """

    def __init__(self, net: TreeNetwork, globals_: GlobalParams):
        lay = net.layout
        self.lay = lay
        self.net = net
        self.c = cost.caching_coefficients(net, globals_)
        self.W = globals_.energy_budget
        self.S = lay.capacity
        self.scale = max(cost.latency_upper_bound(net), 1.0)

    def rows(self, r, delta, b):
        """Contributions of row ``r``; ``delta``/``b`` have shape ``(..., H+1)``."""
        lay = self.lay
        H = lay.H
        P, Q = cost.suffix_products(delta)
        keep = np.cumprod(1.0 - b, axis=-1)
        gain = np.sum(
            np.where(lay.edge_mask[r], lay.weights[r] * (1.0 - P[..., :H] * keep[..., :H]), 0.0),
            axis=-1,
        )
        f = lay.eps_rx[r] + lay.eps_tx[r] * delta + lay.eps_cp[r] * (1.0 / delta - 1.0)
        terms = lay.y[r] * (lay.R[r] * f * P + Q * b * self.c[r])
        energy = np.sum(np.where(lay.mask[r], terms, 0.0), axis=-1)
        stored = np.where(lay.mask[r], lay.y[r] * Q * b, 0.0)
        return gain, energy, stored

    def score(self, gain, energy, usage):
        """Feasible points score their gain; infeasible ones score below any feasible point."""
        W = self.W
        with np.errstate(divide="ignore", invalid="ignore"):
            e_exc = np.where(energy > W, (energy - W) / max(W, 1e-300), 0.0)
        s_exc = np.sum(np.maximum(usage - self.S, 0.0) / np.maximum(self.S, 1.0), axis=-1)
        viol = e_exc + s_exc
        return np.where(viol > 0, -(1.0 + viol) * 10.0 * self.scale, gain), viol <= 0


def _snap(delta: np.ndarray, grid: np.ndarray) -> np.ndarray:
    logs = np.log(grid)
    idx = np.abs(np.log(delta)[..., None] - logs).argmin(axis=-1)
    return idx


def optimize_rates_batch(net, globals_, b: np.ndarray, grid_levels: int = DEFAULT_GRID):
    """Coordinate descent on the rate grid for a batch of cache plans.

    ``b`` has shape ``(n, K, H+1)``.  Returns ``(delta, gain, feasible)`` with
    shapes ``(n, K, H+1)``, ``(n,)``, ``(n,)``.
    """
    lay = net.layout
    grid = rate_grid(grid_levels)
    L = len(grid)
    n = len(b)
    model = _RowModel(net, globals_)
    thr = IMPROVEMENT_TOL * model.scale

    idx = np.empty(b.shape, dtype=int)
    for p in range(n):
        d_star, _ = cost.min_energy_rates(net, globals_, b[p])
        idx[p] = _snap(d_star, grid)
    delta = np.where(lay.mask, grid[idx], 1.0)

    # running totals per plan
    g_rows = np.empty((n, lay.K))
    e_rows = np.empty((n, lay.K))
    usage = np.zeros((n, net.num_nodes))
    for r in range(lay.K):
        g, e, st = model.rows(r, delta[:, r], b[:, r])
        g_rows[:, r], e_rows[:, r] = g, e
        nodes = lay.path_nodes[r, : lay.depth[r] + 1]
        usage[:, nodes] += st[:, : lay.depth[r] + 1]
    score, _ = model.score(g_rows.sum(1), e_rows.sum(1), usage)

    order = [(r, i) for i in range(lay.H, -1, -1) for r in range(lay.K) if lay.mask[r, i]]
    active = np.ones(n, dtype=bool)
    while active.any():
        improved = np.zeros(n, dtype=bool)
        act = np.flatnonzero(active)
        for r, i in order:
            h = lay.depth[r]
            nodes = lay.path_nodes[r, : h + 1]
            cand = np.repeat(delta[act, r][:, None, :], L, axis=1)
            cand[:, :, i] = grid
            g, e, st = model.rows(r, cand, b[act, r][:, None, :])
            g_tot = g_rows[act].sum(1)[:, None] - g_rows[act, r][:, None] + g
            e_tot = e_rows[act].sum(1)[:, None] - e_rows[act, r][:, None] + e
            u_tot = np.repeat(usage[act][:, None, :], L, axis=1)
            old_st = np.where(lay.mask[r], lay.y[r] * cost.suffix_products(delta[act, r])[1] * b[act, r], 0.0)
            u_tot[:, :, nodes] += st[:, :, : h + 1] - old_st[:, None, : h + 1]
            sc, _ = model.score(g_tot, e_tot, u_tot)
            best = sc.argmax(axis=1)
            pick = np.arange(len(act))
            gain_new = sc[pick, best]
            better = gain_new > score[act] + thr
            if not better.any():
                continue
            rows = act[better]
            bsel = best[better]
            idx[rows, r, i] = bsel
            delta[rows, r, i] = grid[bsel]
            score[rows] = gain_new[better]
            g_rows[rows, r] = g[better, bsel]
            e_rows[rows, r] = e[better, bsel]
            usage[rows] = u_tot[better, bsel]
            improved[rows] = True
        active = improved

    gain = cost.gain_batch(net, delta, b)
    energy = cost.energy_upper_bound_terms(net, globals_, delta, b).sum(axis=(-2, -1))
    used = np.stack([cost.cache_usage(net, delta[p], b[p]) for p in range(n)]) if n else usage
    _, feasible = model.score(gain, energy, used)
    return delta, gain, feasible


def _dual_terms(net, globals_, b):
    """Per-plan pieces of the Lagrangian; ``b`` has shape ``(n, K, H+1)``."""
    lay = net.layout
    H = lay.H
    keep = np.cumprod(1.0 - b, axis=-1)
    lat = np.zeros(b.shape)
    lat[..., :H] = np.where(lay.edge_mask, lay.weights * keep[..., :H], 0.0)
    y, R = lay.y[:, None], lay.R[:, None]
    c = cost.caching_coefficients(net, globals_)
    e_const = y * R * (lay.eps_rx - lay.eps_cp)
    e_lin = y * R * lay.eps_tx + y * b * c
    e_inv = y * R * lay.eps_cp
    store = y * b
    onehot = np.zeros((net.num_nodes,) + lay.mask.shape)
    for v, (rows, cols) in enumerate(net.node_slots):
        onehot[v, rows, cols] = 1.0
    return lat, e_const, e_lin, e_inv, store, onehot


def dual_bounds(
    net, globals_, b: np.ndarray, rounds: int = 3, steps: int = 40, caches: bool = True
) -> np.ndarray:
    """Upper bounds on the best gain of each binary plan in ``b`` ``(n, K, H+1)``.

    For multipliers ``lam`` (energy) and ``mu`` (caches) the Lagrangian is
    minimised exactly over the rates by :func:`cost.nested_minimum`; by weak
    duality ``L^u`` minus that minimum bounds the gain.  Multipliers are tuned
    by cyclic bisection on the sign of the constraint residual; every point
    visited gives a valid bound and the best one is kept.  With
    ``caches=False`` only the energy multiplier is tuned (cheaper, weaker).
    """
    lay = net.layout
    n = len(b)
    W = globals_.energy_budget
    S = lay.capacity
    lat, e_const, e_lin, e_inv, store, onehot = _dual_terms(net, globals_, b)
    Lu = cost.latency_upper_bound(net)
    mask = np.broadcast_to(lay.mask, b.shape)

    def evaluate(lam, mu):
        node_price = np.einsum("pv,vkh->pkh", mu, onehot)
        lam3 = lam[:, None, None]
        const = lat + lam3 * e_const
        lin = lam3 * e_lin + node_price * store
        inv = lam3 * e_inv
        delta, best = cost.nested_minimum(const, lin, inv, mask)
        lam_safe = np.where(lam > 0, lam, 0.0)
        d = best.sum(axis=1) - (lam_safe * W if np.isfinite(W) else 0.0) - mu @ S
        _, Q = cost.suffix_products(delta)
        energy = cost.energy_upper_bound_terms(net, globals_, delta, b).sum(axis=(1, 2))
        usage = np.einsum("pkh,vkh->pv", np.where(mask, store * Q, 0.0), onehot)
        return d, energy, usage

    lam = np.zeros(n)
    mu = np.zeros((n, net.num_nodes))
    best_d, energy, usage = evaluate(lam, mu)
    if not np.isfinite(W) and not np.any(usage > S):
        return Lu - best_d
    scale_lam = Lu / max(W, 1e-300) if np.isfinite(W) else 0.0
    for _ in range(rounds):
        coords = [("lam", None)] if np.isfinite(W) else []
        if caches:
            coords += [("mu", v) for v in range(net.num_nodes) if len(net.node_slots[v][0])]
        for kind, v in coords:
            ref = scale_lam if kind == "lam" else Lu / max(S[v], 1e-9)
            lo = np.full(n, np.log(ref) - 25.0)
            hi = np.full(n, np.log(ref) + 25.0)
            for _ in range(steps):
                mid = 0.5 * (lo + hi)
                val = np.exp(mid)
                if kind == "lam":
                    lam_t, mu_t = val, mu
                else:
                    lam_t, mu_t = lam, mu.copy()
                    mu_t[:, v] = val
                d, energy, usage = evaluate(lam_t, mu_t)
                improve = d > best_d
                best_d = np.where(improve, d, best_d)
                if kind == "lam":
                    lam = np.where(improve, val, lam)
                    over = energy > W
                else:
                    mu[:, v] = np.where(improve, val, mu[:, v])
                    over = usage[:, v] > S[v]
                lo = np.where(over, mid, lo)
                hi = np.where(over, hi, mid)
            # a zero multiplier may beat every positive one
            if kind == "lam":
                d, _, _ = evaluate(np.zeros(n), mu)
                lam = np.where(d > best_d, 0.0, lam)
            else:
                mu0 = mu.copy()
                mu0[:, v] = 0.0
                d, _, _ = evaluate(lam, mu0)
                mu[:, v] = np.where(d > best_d, 0.0, mu[:, v])
            best_d = np.maximum(best_d, d)
    return np.minimum(Lu - best_d, Lu)


def _refine(net, globals_, b, delta, settings):
    """SQP refinement of grid rates for one binary plan; returns ``(delta, gain)``."""
    try:
        tau, _, _ = relax._compression_step(net, globals_, b, settings, start=delta)
    except Infeasible:
        return delta, cost.gain(net, delta, b)
    cand = np.clip(np.exp(tau), DELTA_MIN, 1.0)
    if cost.check_feasibility(net, globals_, cand, b).feasible:
        g_new = cost.gain(net, cand, b)
        g_old = cost.gain(net, delta, b)
        if g_new > g_old:
            return cand, g_new
    return delta, cost.gain(net, delta, b)


def _chunks(net: TreeNetwork, grid_levels: int) -> int:
    lay = net.layout
    per_plan = grid_levels * lay.K * (lay.H + 1) + net.num_nodes * grid_levels
    return max(1, _BATCH_BUDGET // max(per_plan, 1))


def optimize_compression_given_cache(
    net: TreeNetwork,
    globals_: GlobalParams,
    cache_plan,
    grid_levels: int = DEFAULT_GRID,
    refine: bool = True,
) -> tuple[CompressionPlan, float]:
    """Best rates for a fixed binary cache plan; raises Infeasible if none fit.

    Coordinate descent on the grid, then (with ``refine``) an SQP pass from
    the grid point; the better feasible point is returned.
    """
    b = cost._arrays(cache_plan)
    delta, gain, feasible = optimize_rates_batch(net, globals_, b[None], grid_levels)
    if not feasible[0]:
        raise Infeasible("no grid point satisfies the energy and cache constraints")
    d, g = delta[0], float(gain[0])
    if refine:
        d, g = _refine(net, globals_, b, d, relax.SolverSettings())
    return CompressionPlan(net, d), float(g)


def brute_force(
    net: TreeNetwork,
    globals_: GlobalParams,
    grid_levels: int = DEFAULT_GRID,
    cap: int = DEFAULT_CAP,
    refine: bool = True,
) -> OracleResult:
    """Best plan over all cache configurations; ties go to the first plan enumerated."""
    total = count_cache_plans(net)
    if total > cap:
        raise InstanceTooLarge(f"{total} cache plans exceed cap {cap}")
    # caching only adds energy, so the uncached minimum is a global floor
    _, e_floor = cost.min_energy_rates(net, globals_, CachePlan.empty(net))
    if e_floor > globals_.energy_budget:
        raise Infeasible(f"minimum energy {e_floor:.6g} exceeds budget {globals_.energy_budget:.6g}")
    combos = np.array(list(itertools.product(*_position_states(net))), dtype=int)
    step = _chunks(net, grid_levels)
    deltas, gains, bounds = [], [], []
    for start in range(0, total, step):
        b = _plan_arrays(net, combos[start : start + step])
        delta, gain, feasible = optimize_rates_batch(net, globals_, b, grid_levels)
        deltas.append(delta)
        gains.append(np.where(feasible, gain, -np.inf))
        bounds.append(
            dual_bounds(net, globals_, b, rounds=1, caches=False)
            if refine
            else np.full(len(b), np.inf)
        )
    delta = np.concatenate(deltas)
    gain = np.concatenate(gains)
    bound = np.concatenate(bounds)
    refined = 0
    if refine:
        settings = relax.SolverSettings()
        tol = IMPROVEMENT_TOL * max(cost.latency_upper_bound(net), 1.0)
        incumbent = gain.max()
        # tighten with cache multipliers only where the cheap bound is inconclusive
        open_ = np.flatnonzero(bound > incumbent + tol)
        for start in range(0, len(open_), step):
            sel = open_[start : start + step]
            b = _plan_arrays(net, combos[sel])
            bound[sel] = np.minimum(bound[sel], dual_bounds(net, globals_, b))
        bound = np.maximum(bound, np.where(np.isfinite(gain), gain, -np.inf))
        for p in np.argsort(-bound, kind="stable"):
            if bound[p] <= incumbent + tol:
                break
            b = _plan_arrays(net, combos[p : p + 1])[0]
            if not np.isfinite(gain[p]):
                try:
                    d0, _ = cost.min_energy_rates(net, globals_, b)
                    d, g = _refine(net, globals_, b, d0, settings)
                    if not cost.check_feasibility(net, globals_, d, b).feasible:
                        continue
                except Infeasible:
                    continue
            else:
                d, g = _refine(net, globals_, b, delta[p], settings)
            refined += 1
            if g > gain[p]:
                delta[p], gain[p] = d, g
            incumbent = max(incumbent, gain[p])
    if not np.any(np.isfinite(gain)):
        raise Infeasible("no cache configuration admits feasible rates")
    j = int(np.argmax(gain))
    delta_plan = CompressionPlan(net, delta[j])
    cache_plan = CachePlan(net, _plan_arrays(net, combos[j : j + 1])[0], "binary")
    sol = Solution.evaluate(net, globals_, delta_plan, cache_plan, solver="oracle", iterations=total)
    return OracleResult(
        best_solution=sol,
        configurations_examined=total,
        grid_resolution=grid_levels,
        upper_bound=float(np.max(bound)) if refine else float("inf"),
        refined=refined,
    )
