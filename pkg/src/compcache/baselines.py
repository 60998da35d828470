"""Genetic-algorithm baseline for the joint problem."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cost
from .errors import Infeasible
from .model import CachePlan, CompressionPlan, GlobalParams, TreeNetwork
from .oracle import _plan_arrays
from .relax import LOG_DELTA_MIN
from .solution import Solution


@dataclass
class GaSettings:
    population: int = 60
    generations: int = 150
    crossover_rate: float = 0.9
    mutation_rate: float = 0.1
    mutation_scale: float = 0.5  # std of the log-rate mutation
    tournament: int = 3
    elite: int = 2
    penalty: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.elite >= self.population:
            raise ValueError("elite count must be below the population size")


@dataclass
class GaHistory:
    best_fitness: list[float] = field(default_factory=list)
    best_feasible_gain: list[float] = field(default_factory=list)


class _Fitness:
    def __init__(self, net: TreeNetwork, globals_: GlobalParams, penalty: float):
        lay = net.layout
        self.net = net
        self.globals = globals_
        self.mask = lay.mask
        self.W = globals_.energy_budget
        self.S = lay.capacity
        self.scale = max(cost.latency_upper_bound(net), 1.0)
        self.penalty = penalty
        self.onehot = np.zeros((net.num_nodes,) + lay.mask.shape)
        for v, (rows, cols) in enumerate(net.node_slots):
            self.onehot[v, rows, cols] = 1.0

    def __call__(self, positions, tau):
        b = _plan_arrays(self.net, positions)
        delta = np.where(self.mask, np.exp(tau), 1.0)
        gain = cost.gain_batch(self.net, delta, b)
        energy = cost.energy_upper_bound_terms(self.net, self.globals, delta, b).sum(axis=(1, 2))
        _, Q = cost.suffix_products(delta)
        stored = np.where(self.mask, self.net.layout.y[:, None] * Q * b, 0.0)
        usage = np.einsum("pkh,vkh->pv", stored, self.onehot)
        with np.errstate(divide="ignore", invalid="ignore"):
            e_exc = np.where(energy > self.W, (energy - self.W) / max(self.W, 1e-300), 0.0)
        s_exc = np.sum(np.maximum(usage - self.S, 0.0) / np.maximum(self.S, 1.0), axis=1)
        viol = e_exc + s_exc
        fitness = gain - self.penalty * self.scale * viol
        return fitness, gain, viol <= 0


def ga_solve(
    net: TreeNetwork,
    globals_: GlobalParams,
    settings: GaSettings | None = None,
    history: GaHistory | None = None,
) -> Solution:
    """Evolve cache positions and log-rates; return the best feasible individual seen."""
    st = settings or GaSettings()
    rng = np.random.default_rng(st.seed)
    lay = net.layout
    K = lay.K
    depth = lay.depth.astype(int)
    mask = lay.mask
    n_pop = st.population
    fit = _Fitness(net, globals_, st.penalty)

    pos = rng.integers(-1, depth[None, :] + 1, size=(n_pop, K))
    tau = np.where(mask, rng.uniform(LOG_DELTA_MIN, 0.0, size=(n_pop,) + mask.shape), 0.0)
    fitness, gain, feasible = fit(pos, tau)

    best_gain, best = -np.inf, None

    def keep_best():
        nonlocal best_gain, best
        cand = np.where(feasible, gain, -np.inf)
        j = int(np.argmax(cand))
        if cand[j] > best_gain:
            best_gain, best = float(cand[j]), (pos[j].copy(), tau[j].copy())

    keep_best()
    for _ in range(st.generations):
        if history is not None:
            history.best_fitness.append(float(fitness.max()))
            history.best_feasible_gain.append(best_gain)
        order = np.argsort(-fitness, kind="stable")
        elite = order[: st.elite]

        n_child = n_pop - st.elite
        entrants = rng.integers(0, n_pop, size=(2 * n_child, st.tournament))
        winners = entrants[np.arange(2 * n_child), np.argmax(fitness[entrants], axis=1)]
        pa, pb = winners[:n_child], winners[n_child:]

        cross = rng.random(n_child) < st.crossover_rate
        take_b_pos = (rng.random((n_child, K)) < 0.5) & cross[:, None]
        take_b_tau = (rng.random((n_child,) + mask.shape) < 0.5) & cross[:, None, None]
        c_pos = np.where(take_b_pos, pos[pb], pos[pa])
        c_tau = np.where(take_b_tau, tau[pb], tau[pa])

        flip = rng.random((n_child, K)) < st.mutation_rate
        fresh = rng.integers(-1, depth[None, :] + 1, size=(n_child, K))
        c_pos = np.where(flip, fresh, c_pos)
        jitter = rng.random((n_child,) + mask.shape) < st.mutation_rate
        noise = rng.normal(0.0, st.mutation_scale, size=(n_child,) + mask.shape)
        c_tau = np.clip(np.where(jitter & mask, c_tau + noise, c_tau), LOG_DELTA_MIN, 0.0)
        c_tau = np.where(mask, c_tau, 0.0)

        pos = np.concatenate([pos[elite], c_pos])
        tau = np.concatenate([tau[elite], c_tau])
        fitness, gain, feasible = fit(pos, tau)
        keep_best()
    if history is not None:
        history.best_fitness.append(float(fitness.max()))
        history.best_feasible_gain.append(best_gain)

    if best is None:
        raise Infeasible("no feasible individual found")
    b_pos, b_tau = best
    delta = CompressionPlan(net, np.clip(np.where(mask, np.exp(b_tau), 1.0), 1e-3, 1.0))
    cache = CachePlan(net, _plan_arrays(net, b_pos[None])[0], "binary")
    sol = Solution.evaluate(net, globals_, delta, cache, solver="ga", iterations=st.generations)
    if not sol.feasible:
        raise Infeasible("best individual failed the exact feasibility check")
    return sol
