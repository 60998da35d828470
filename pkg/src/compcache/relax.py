"""Relaxed joint problem: log-domain transform and alternating solver.

The caching variables are relaxed to ``[0, 1]`` and the latency product
``prod (1 - b)`` is replaced by ``1 - min(1, sum b)``.  Substituting
``delta = exp(tau)`` and ``b = exp(u)`` turns objective and constraints into
sums of exponentials of affine forms.  The solver alternates between

* the caching step (``tau`` fixed): with the one-copy constraint every prefix
  sum of ``b`` stays below 1, so the surrogate is linear in ``b`` and all
  constraints are linear; this is solved as a linear program, and
* the compression step (``b`` fixed): a smooth problem in ``tau`` with a
  convex objective, solved by SQP with closed-form gradients.

Block-coordinate ascent stalls when the rates step cannot see that more
compression would free cache space for the caching step, so the alternation
is followed by one joint SQP pass over ``(tau, b)`` started from its result.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog, minimize

from . import cost
from .errors import Infeasible, NonConvergence
from .model import DELTA_MIN, CachePlan, CompressionPlan, GlobalParams, TreeNetwork

log = logging.getLogger(__name__)

LOG_DELTA_MIN = float(np.log(DELTA_MIN))


@dataclass(frozen=True, eq=False)
class LogVars:
    """``tau = log delta`` and ``u = log b``; padded entries of ``u`` are ``-inf``."""

    tau: np.ndarray
    u: np.ndarray

    @classmethod
    def from_plans(cls, net, delta, b, b_min: float = 1e-6) -> "LogVars":
        mask = net.layout.mask
        tau = np.where(mask, np.log(cost._arrays(delta)), 0.0)
        u = np.where(mask, np.log(np.maximum(cost._arrays(b), b_min)), -np.inf)
        return cls(tau, u)

    def rates(self, net) -> np.ndarray:
        return np.where(net.layout.mask, np.exp(self.tau), 1.0)

    def caching(self, net) -> np.ndarray:
        return np.where(net.layout.mask, np.exp(self.u), 0.0)


def _tail_sums(tau: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(sum_{m>i} tau_m, sum_{m>=i} tau_m)`` along the last axis."""
    incl = np.flip(np.cumsum(np.flip(tau, -1), axis=-1), -1)
    return incl - tau, incl


def _excl_cumsum(a: np.ndarray) -> np.ndarray:
    return np.cumsum(a, axis=-1) - a


def transformed_objective(net: TreeNetwork, lv: LogVars) -> float:
    """Surrogate gain written in ``(tau, u)``."""
    lay = net.layout
    H = lay.H
    excl, _ = _tail_sums(np.where(lay.mask, lv.tau, 0.0))
    covered = np.minimum(1.0, np.cumsum(np.exp(lv.u), axis=-1))
    w = lay.weights
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    total = np.exp(logw) * (1.0 - np.exp(excl[:, :H]) * (1.0 - covered[:, :H]))
    return float(np.sum(np.where(lay.edge_mask, total, 0.0)))


def _energy_coefficients(net, globals_, b):
    lay = net.layout
    y, R = lay.y[:, None], lay.R[:, None]
    c = cost.caching_coefficients(net, globals_)
    alpha = np.where(lay.mask, y * R * (lay.eps_rx - lay.eps_cp), 0.0)
    beta = np.where(lay.mask, y * R * lay.eps_tx + y * b * c, 0.0)
    gamma = np.where(lay.mask, y * R * lay.eps_cp, 0.0)
    return alpha, beta, gamma


def transformed_energy_lhs(net: TreeNetwork, globals_: GlobalParams, lv: LogVars) -> float:
    """Energy upper bound as Part 1 (signomial in tau) plus two exponential sums."""
    lay = net.layout
    tau = np.where(lay.mask, lv.tau, 0.0)
    excl, incl = _tail_sums(tau)
    y, R = lay.y[:, None], lay.R[:, None]
    part1 = R * y * (
        lay.eps_rx - lay.eps_cp + lay.eps_tx * np.exp(tau) + lay.eps_cp * np.exp(-tau)
    ) * np.exp(excl)
    wT = globals_.w_ca * globals_.period
    part2 = np.exp(incl + np.log(y * wT) + lv.u)
    coef3 = y * (R - 1.0) * lay.eps_tx
    with np.errstate(divide="ignore"):
        part3 = np.where(coef3 > 0, np.exp(incl + np.log(coef3) + lv.u), 0.0)
    return float(np.sum(np.where(lay.mask, part1 + part2 + part3, 0.0)))


def transformed_cache_lhs(net: TreeNetwork, lv: LogVars, v: int) -> float:
    """Bits stored at node ``v`` written in ``(tau, u)``."""
    lay = net.layout
    rows, cols = net.node_slots[v]
    if len(rows) == 0:
        return 0.0
    _, incl = _tail_sums(np.where(lay.mask, lv.tau, 0.0))
    expo = incl[rows, cols] + np.log(lay.y[rows]) + lv.u[rows, cols]
    return float(np.sum(np.exp(expo)))


# ---------------------------------------------------------------------------
# Solver


@dataclass
class SolverSettings:
    tolerance: float = 1e-3
    max_outer_iterations: int = 50
    max_inner_iterations: int = 500
    inner_ftol: float = 1e-12
    constraint_margin: float = 1e-9
    seed: int = 0
    b_min: float = 1e-6
    repair_steps: int = 20
    joint_polish: bool = True

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.max_outer_iterations < 1 or self.max_inner_iterations < 1:
            raise ValueError("iteration caps must be >= 1")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    max_violation: float
    inner_iterations: int


@dataclass
class SolveTrace:
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    initial_objective: float = float("nan")
    polished_objective: float = float("nan")
    polish_iterations: int = 0

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def objectives(self) -> list[float]:
        return [r.objective for r in self.records]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "max_violation", "inner_iterations"])
            for r in self.records:
                w.writerow([r.iteration, repr(r.objective), repr(r.max_violation), r.inner_iterations])


def max_violation(net, globals_, delta, b) -> float:
    """Largest relative constraint violation (0 when feasible)."""
    lay = net.layout
    delta, b = cost._arrays(delta), cost._arrays(b)
    viol = 0.0
    W = globals_.energy_budget
    if np.isfinite(W):
        e = cost.energy_ub(net, globals_, delta, b)
        viol = max(viol, (e - W) / max(W, 1e-300))
    used = cost.cache_usage(net, delta, b)
    cap = lay.capacity
    rel = (used - cap) / np.maximum(cap, 1.0)
    viol = max(viol, float(rel.max(initial=0.0)))
    sums = np.where(lay.mask, b, 0.0).sum(axis=1)
    viol = max(viol, float((sums - 1.0).max(initial=0.0)))
    return max(viol, 0.0)


def _is_feasible(net, globals_, delta, b) -> bool:
    return cost.check_feasibility(net, globals_, delta, b).feasible


def solve_caching_subproblem(net, globals_, delta_plan, settings: SolverSettings | None = None) -> CachePlan:
    """Maximise the surrogate gain over relaxed caching for fixed rates."""
    settings = settings or SolverSettings()
    b, _ = _caching_lp(net, globals_, cost._arrays(delta_plan), settings)
    return CachePlan(net, b, "relaxed")


def _caching_lp(net, globals_, delta, settings):
    lay = net.layout
    mask = lay.mask
    H = lay.H
    P, Q = cost.suffix_products(delta)
    # Under one copy per leaf the prefix sums never exceed 1, so the surrogate
    # gain is  const + sum_j b_j * sum_{i>=j} w_i P_i.
    A = lay.weights * P[:, :H]
    coef = np.zeros(mask.shape)
    coef[:, :H] = np.flip(np.cumsum(np.flip(A, -1), axis=-1), -1)
    n = int(mask.sum())
    rows_idx, cols_idx = np.nonzero(mask)
    c = coef[mask]
    margin = 1.0 - settings.constraint_margin

    A_ub, b_ub = [], []
    W = globals_.energy_budget
    zero_b = np.zeros(mask.shape)
    part1 = cost.energy_ub(net, globals_, delta, zero_b)
    if np.isfinite(W):
        if part1 > W * (1.0 + 1e-12):
            raise Infeasible("energy budget exceeded before any caching")
        a = (lay.y[:, None] * Q * cost.caching_coefficients(net, globals_))[mask]
        rhs = (W - part1) * margin
        scale = max(rhs, a.max(initial=0.0), 1e-300)
        A_ub.append(a / scale)
        b_ub.append(rhs / scale)
    stored = (lay.y[:, None] * Q)[mask]
    for v, (rows, cols) in enumerate(net.node_slots):
        if len(rows) == 0:
            continue
        row = np.zeros(n)
        sel = np.isin(rows_idx * (H + 1) + cols_idx, rows * (H + 1) + cols)
        row[sel] = stored[sel]
        rhs = lay.capacity[v] * margin
        scale = max(rhs, row.max(), 1e-300)
        A_ub.append(row / scale)
        b_ub.append(rhs / scale)
    for r in range(lay.K):
        A_ub.append((rows_idx == r).astype(float))
        b_ub.append(1.0)

    cmax = c.max(initial=0.0)
    if cmax <= 0:
        return zero_b, 0
    res = linprog(
        -c / cmax, A_ub=np.array(A_ub), b_ub=np.array(b_ub), bounds=(0.0, 1.0), method="highs"
    )
    if res.status == 2:
        raise Infeasible("caching subproblem infeasible")
    if res.status != 0:
        log.warning("caching LP ended with status %s: %s", res.status, res.message)
        return zero_b, 0
    b = np.zeros(mask.shape)
    b[mask] = np.clip(res.x, 0.0, 1.0)
    b = _shrink_to_feasible(net, globals_, delta, b)
    return b, int(getattr(res, "nit", 0))


def _shrink_to_feasible(net, globals_, delta, b):
    """Scale ``b`` down until every (linear in ``b``) constraint holds."""
    lay = net.layout
    sums = b.sum(axis=1)
    b = b / np.maximum(sums, 1.0)[:, None]
    ratio = 1.0
    W = globals_.energy_budget
    if np.isfinite(W):
        base = cost.energy_ub(net, globals_, delta, np.zeros_like(b))
        extra = cost.energy_ub(net, globals_, delta, b) - base
        if extra > 0 and base + extra > W:
            ratio = min(ratio, max(W - base, 0.0) / extra)
    used = cost.cache_usage(net, delta, b)
    over = used > lay.capacity
    if over.any():
        ratio = min(ratio, float(np.min(lay.capacity[over] / used[over])))
    if ratio < 1.0:
        b = b * ratio * (1.0 - 1e-12)
    return b


class _CompressionProblem:
    """Objective/constraint callbacks for the rates step in ``tau``."""

    def __init__(self, net, globals_, b, margin):
        lay = net.layout
        self.net = net
        self.mask = lay.mask
        self.H = lay.H
        covered = np.minimum(1.0, np.cumsum(b, axis=-1))
        self.omega = np.where(lay.edge_mask, lay.weights * (1.0 - covered[:, : self.H]), 0.0)
        self.scale_obj = max(cost.latency_upper_bound(net), 1e-300)
        self.alpha, self.beta, self.gamma = _energy_coefficients(net, globals_, b)
        self.W = globals_.energy_budget * (1.0 - margin)
        self.finite_W = bool(np.isfinite(globals_.energy_budget))
        self.scale_W = max(self.W, 1e-300)
        self.store = np.where(lay.mask, lay.y[:, None] * b, 0.0)
        self.cache_nodes = [
            (v, rows, cols)
            for v, (rows, cols) in enumerate(net.node_slots)
            if np.any(self.store[rows, cols] > 0)
        ]
        self.cap = lay.capacity * (1.0 - margin)

    @property
    def degenerate(self) -> bool:
        return not np.any(self.omega > 0)

    def unpack(self, x):
        tau = np.zeros(self.mask.shape)
        tau[self.mask] = x
        return tau

    def objective(self, x):
        tau = self.unpack(x)
        excl, _ = _tail_sums(tau)
        T = self.omega * np.exp(excl[:, : self.H])
        g = np.zeros(self.mask.shape)
        g[:, : self.H] = T
        grad = _excl_cumsum(g)
        return T.sum() / self.scale_obj, grad[self.mask] / self.scale_obj

    def energy(self, tau):
        excl, incl = _tail_sums(tau)
        A = self.alpha * np.exp(excl)
        B = self.beta * np.exp(incl)
        C = self.gamma * np.exp(excl - tau)
        grad = _excl_cumsum(A) + np.cumsum(B, axis=-1) + _excl_cumsum(C) - C
        return (A + B + C).sum(), grad

    def constraints(self, x):
        tau = self.unpack(x)
        vals, jac = [], []
        if self.finite_W:
            e, g = self.energy(tau)
            vals.append((self.W - e) / self.scale_W)
            jac.append(-g[self.mask] / self.scale_W)
        if self.cache_nodes:
            _, incl = _tail_sums(tau)
            held = self.store * np.exp(incl)
            for v, rows, cols in self.cache_nodes:
                scale = max(self.cap[v], 1.0)
                vals.append((self.cap[v] - held[rows, cols].sum()) / scale)
                g = np.zeros(self.mask.shape)
                for r, i in zip(rows, cols):
                    g[r, i:] += held[r, i]
                jac.append(-g[self.mask] / scale)
        return np.array(vals), np.array(jac).reshape(len(vals), -1)


def solve_compression_subproblem(
    net: TreeNetwork,
    globals_: GlobalParams,
    cache_plan,
    settings: SolverSettings | None = None,
    start=None,
) -> CompressionPlan:
    """Maximise the surrogate gain over rates for fixed (relaxed) caching."""
    settings = settings or SolverSettings()
    b = cost._arrays(cache_plan)
    tau, _, _ = _compression_step(net, globals_, b, settings, start)
    return CompressionPlan.from_log(net, tau)


def _compression_step(net, globals_, b, settings, start):
    """Return ``(tau, inner_iterations, degenerate)``; never worse than a feasible start."""
    lay = net.layout
    mask = lay.mask
    prob = _CompressionProblem(net, globals_, b, settings.constraint_margin)
    starts = []
    if start is not None:
        starts.append(np.where(mask, np.log(cost._arrays(start)), 0.0))
    incumbent, best = None, np.inf
    for tau0 in starts:
        if _is_feasible(net, globals_, np.exp(tau0), b):
            incumbent, best = tau0, prob.objective(tau0[mask])[0]
    if prob.degenerate and incumbent is not None:
        return incumbent, 0, True
    if incumbent is None:
        d_star, e_min = cost.min_energy_rates(net, globals_, b)
        if e_min > globals_.energy_budget:
            raise Infeasible("rates cannot meet the energy budget for this caching plan")
        starts.append(np.log(d_star))
        starts.append(np.where(mask, LOG_DELTA_MIN, 0.0))
        for tau0 in starts[-2:]:
            if _is_feasible(net, globals_, np.exp(tau0), b):
                val = prob.objective(tau0[mask])[0]
                if val < best:
                    incumbent, best = tau0, val
        if prob.degenerate and incumbent is not None:
            return incumbent, 0, True

    lo = np.full(int(mask.sum()), LOG_DELTA_MIN)
    hi = np.zeros_like(lo)
    cons = []
    if prob.finite_W or prob.cache_nodes:
        cons.append({
            "type": "ineq",
            "fun": lambda x: prob.constraints(x)[0],
            "jac": lambda x: prob.constraints(x)[1],
        })
    inner = 0
    for tau0 in starts:
        res = minimize(
            prob.objective,
            np.clip(tau0[mask], lo, hi),
            jac=True,
            method="SLSQP",
            bounds=list(zip(lo, hi)),
            constraints=cons,
            options={"maxiter": settings.max_inner_iterations, "ftol": settings.inner_ftol},
        )
        inner += int(res.nit)
        tau = prob.unpack(np.clip(res.x, lo, hi))
        delta = np.where(mask, np.exp(tau), 1.0)
        if not _is_feasible(net, globals_, delta, b):
            continue
        val = prob.objective(tau[mask])[0]
        if val < best:
            incumbent, best = tau, val
        if incumbent is not None and start is not None:
            break
    if incumbent is None:
        raise Infeasible("no feasible rates found for this caching plan")
    return incumbent, inner, False


class _JointProblem(_CompressionProblem):
    """Surrogate gain over ``x = (tau, b)`` with one-copy rows made explicit.

    Inside the one-copy region every prefix sum of ``b`` is at most 1, so the
    clamp in the surrogate is inactive and the objective is smooth.
    """

    def __init__(self, net, globals_, margin):
        lay = net.layout
        zero = np.zeros(lay.mask.shape)
        super().__init__(net, globals_, zero, margin)
        self.n = int(lay.mask.sum())
        self.weights = np.where(lay.edge_mask, lay.weights, 0.0)
        self.c = cost.caching_coefficients(net, globals_)
        self.y = lay.y[:, None]
        self.base_beta = self.beta
        self.slots = [
            (v, rows, cols) for v, (rows, cols) in enumerate(net.node_slots) if len(rows)
        ]
        self.K = lay.K

    def split(self, x):
        tau = np.zeros(self.mask.shape)
        b = np.zeros(self.mask.shape)
        tau[self.mask] = x[: self.n]
        b[self.mask] = x[self.n :]
        return tau, b

    def objective(self, x):
        tau, b = self.split(x)
        excl, _ = _tail_sums(tau)
        H = self.H
        wp = np.zeros(self.mask.shape)
        wp[:, :H] = self.weights * np.exp(excl[:, :H])
        rem = 1.0 - np.cumsum(b, axis=-1)
        T = wp * rem
        g_tau = _excl_cumsum(T)
        g_b = -np.flip(np.cumsum(np.flip(wp, -1), axis=-1), -1)
        grad = np.concatenate([g_tau[self.mask], g_b[self.mask]])
        return T.sum() / self.scale_obj, grad / self.scale_obj

    def constraints(self, x):
        tau, b = self.split(x)
        excl, incl = _tail_sums(tau)
        vals, jac = [], []
        if self.finite_W:
            self.beta = np.where(self.mask, self.base_beta + self.y * b * self.c, 0.0)
            e, g_tau = self.energy(tau)
            g_b = np.where(self.mask, self.y * self.c * np.exp(incl), 0.0)
            vals.append((self.W - e) / self.scale_W)
            jac.append(-np.concatenate([g_tau[self.mask], g_b[self.mask]]) / self.scale_W)
        unit = np.where(self.mask, self.y * np.exp(incl), 0.0)
        held = unit * b
        for v, rows, cols in self.slots:
            scale = max(self.cap[v], 1.0)
            vals.append((self.cap[v] - held[rows, cols].sum()) / scale)
            g_tau = np.zeros(self.mask.shape)
            g_b = np.zeros(self.mask.shape)
            for r, i in zip(rows, cols):
                g_tau[r, i:] += held[r, i]
                g_b[r, i] = unit[r, i]
            jac.append(-np.concatenate([g_tau[self.mask], g_b[self.mask]]) / scale)
        for r in range(self.K):
            g_b = np.zeros(self.mask.shape)
            g_b[r] = 1.0
            vals.append(1.0 - b[r].sum())
            jac.append(-np.concatenate([np.zeros(self.n), g_b[self.mask]]))
        return np.array(vals), np.array(jac)


def _joint_step(net, globals_, tau, b, settings):
    """Joint SQP from a feasible ``(tau, b)``; returns the better of start and result."""
    lay = net.layout
    mask = lay.mask
    prob = _JointProblem(net, globals_, settings.constraint_margin)
    x0 = np.concatenate([tau[mask], b[mask]])
    lo = np.concatenate([np.full(prob.n, LOG_DELTA_MIN), np.zeros(prob.n)])
    hi = np.concatenate([np.zeros(prob.n), np.ones(prob.n)])
    res = minimize(
        prob.objective,
        x0,
        jac=True,
        method="SLSQP",
        bounds=list(zip(lo, hi)),
        constraints=[{
            "type": "ineq",
            "fun": lambda x: prob.constraints(x)[0],
            "jac": lambda x: prob.constraints(x)[1],
        }],
        options={"maxiter": settings.max_inner_iterations, "ftol": settings.inner_ftol},
    )
    t_new, b_new = prob.split(np.clip(res.x, lo, hi))
    b_new = np.where(mask, b_new, 0.0)
    delta = np.where(mask, np.exp(t_new), 1.0)
    if not _is_feasible(net, globals_, delta, b_new):
        b_new = _shrink_to_feasible(net, globals_, delta, b_new)
    if not _is_feasible(net, globals_, delta, b_new):
        return tau, b, int(res.nit)
    before = cost.gain_approx(net, np.exp(tau), b)
    if cost.gain_approx(net, delta, b_new) > before:
        return t_new, b_new, int(res.nit)
    return tau, b, int(res.nit)


def initial_rates(net, globals_, settings: SolverSettings) -> np.ndarray:
    """Random ``tau`` in the box, pulled toward the energy minimiser if needed."""
    lay = net.layout
    rng = np.random.default_rng(settings.seed)
    tau = np.where(lay.mask, rng.uniform(LOG_DELTA_MIN, 0.0, size=lay.mask.shape), 0.0)
    zero_b = np.zeros(lay.mask.shape)
    W = globals_.energy_budget
    if cost.energy_ub(net, globals_, np.exp(tau), zero_b) <= W:
        return tau
    d_star, e_min = cost.min_energy_rates(net, globals_, zero_b)
    if e_min > W:
        raise Infeasible(f"minimum energy {e_min:.6g} exceeds budget {W:.6g}")
    target = np.log(d_star)
    lo_t, hi_t = 0.0, 1.0
    for _ in range(settings.repair_steps):
        mid = 0.5 * (lo_t + hi_t)
        trial = (1 - mid) * tau + mid * target
        if cost.energy_ub(net, globals_, np.exp(trial), zero_b) <= W:
            hi_t = mid
        else:
            lo_t = mid
    return (1 - hi_t) * tau + hi_t * target


def solve_master_slave(net: TreeNetwork, globals_: GlobalParams, settings: SolverSettings | None = None):
    """Alternate caching and rate steps from a random start, then polish jointly.

    Returns ``(CompressionPlan, relaxed CachePlan, SolveTrace)``.  Raises
    :class:`NonConvergence` (carrying the best iterate) if the objective
    still moves by ``tolerance`` after ``max_outer_iterations`` rounds.
    """
    settings = settings or SolverSettings()
    tau = initial_rates(net, globals_, settings)
    b = np.zeros(net.layout.mask.shape)
    trace = SolveTrace()
    obj = cost.gain_approx(net, np.exp(tau), b)
    trace.initial_objective = obj
    for it in range(1, settings.max_outer_iterations + 1):
        delta = np.exp(tau)
        b_new, lp_iters = _caching_lp(net, globals_, delta, settings)
        if cost.gain_approx(net, delta, b_new) >= cost.gain_approx(net, delta, b):
            b = b_new
        tau, inner, _ = _compression_step(net, globals_, b, settings, start=np.exp(tau))
        new_obj = cost.gain_approx(net, np.exp(tau), b)
        trace.records.append(IterationRecord(
            iteration=it,
            objective=new_obj,
            max_violation=max_violation(net, globals_, np.exp(tau), b),
            inner_iterations=inner + lp_iters,
        ))
        done = abs(new_obj - obj) < settings.tolerance
        obj = new_obj
        if done:
            trace.converged = True
            break
    if settings.joint_polish:
        tau, b, trace.polish_iterations = _joint_step(net, globals_, tau, b, settings)
    trace.polished_objective = cost.gain_approx(net, np.exp(tau), b)
    result = (CompressionPlan.from_log(net, tau), CachePlan(net, b, "relaxed"), trace)
    if not trace.converged:
        raise NonConvergence(
            f"objective still changing after {settings.max_outer_iterations} iterations",
            result=result,
        )
    return result
