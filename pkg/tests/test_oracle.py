import numpy as np
import pytest
from conftest import chain

from compcache import build_tree, cost, greedy, oracle, rounding
from compcache.errors import Infeasible, InstanceTooLarge
from compcache.instances import TABLE2_GLOBALS, TABLE2_NODE, random_contended_instance, table2_tree
from compcache.model import CachePlan, GlobalParams
from compcache.relax import SolverSettings


def star(n_leaves=2):
    node = {k: TABLE2_NODE[k] for k in ("eps_rx", "eps_tx", "eps_cp", "cache_capacity")}
    nodes = [{"id": 0, "parent": None, **node}]
    for v in range(1, n_leaves + 1):
        nodes.append({"id": v, "parent": 0, **node, "data_volume": 100.0, "request_count": 1000.0})
    return build_tree({"nodes": nodes, "edge_latency": 0.6})


def test_plan_counts(bt7):
    assert len(list(oracle.enumerate_cache_plans(chain()))) == 3
    assert len(list(oracle.enumerate_cache_plans(bt7))) == 256
    assert len(list(oracle.enumerate_cache_plans(star(2)))) == 9
    assert oracle.count_cache_plans(table2_tree(5)) == 7**32


def test_enumeration_is_distinct_and_lexicographic():
    net = star(2)
    plans = list(oracle.enumerate_cache_plans(net))
    keys = [tuple(-1 if p is None else p for p in plan.positions().values()) for plan in plans]
    assert keys == sorted(keys)
    assert len(set(keys)) == len(keys)
    assert plans[0] == CachePlan.empty(net)


def test_enumeration_cap(bt7):
    with pytest.raises(InstanceTooLarge):
        list(oracle.enumerate_cache_plans(bt7, cap=100))
    with pytest.raises(InstanceTooLarge):
        oracle.brute_force(table2_tree(4), TABLE2_GLOBALS)


def test_given_cache_sink_caching_unconstrained(bt7, loose_globals):
    big = table2_tree(2, cache_capacity=1e9)
    sink = CachePlan.at_positions(big, {k: 0 for k in big.leaves})
    _, g = oracle.optimize_compression_given_cache(big, loose_globals, sink)
    assert g == 480000.0


def test_given_cache_zero_budget(bt7):
    with pytest.raises(Infeasible):
        oracle.optimize_compression_given_cache(bt7, TABLE2_GLOBALS.replace(energy_budget=0.0), CachePlan.empty(bt7))


def test_given_cache_grid_self_consistency():
    net = chain()
    empty = CachePlan.empty(net)
    _, e_min = cost.min_energy_rates(net, TABLE2_GLOBALS, empty)
    g = TABLE2_GLOBALS.replace(energy_budget=1.3 * e_min)
    _, coarse = oracle.optimize_compression_given_cache(net, g, empty, 50, refine=False)
    _, fine = oracle.optimize_compression_given_cache(net, g, empty, 500, refine=False)
    assert coarse >= 0.98 * fine


def test_given_cache_returns_feasible_rates(rng):
    for seed in range(5):
        net, g = random_contended_instance(seed)
        for plan in list(oracle.enumerate_cache_plans(net))[:: max(1, oracle.count_cache_plans(net) // 7)]:
            try:
                d, gain = oracle.optimize_compression_given_cache(net, g, plan)
            except Infeasible:
                continue
            assert cost.check_feasibility(net, g, d, plan).feasible
            assert gain == pytest.approx(cost.gain(net, d, plan), rel=1e-12)


def test_brute_force_bt7(bt7):
    res = oracle.brute_force(bt7, TABLE2_GLOBALS)
    assert res.best_solution.gain == pytest.approx(480000.0, rel=1e-9)
    assert res.configurations_examined == 256
    assert res.grid_resolution == oracle.DEFAULT_GRID
    assert res.best_solution.feasible


def test_brute_force_chain_dominates_greedy():
    net = chain()
    empty = CachePlan.empty(net)
    _, e_min = cost.min_energy_rates(net, TABLE2_GLOBALS, empty)
    g = TABLE2_GLOBALS.replace(energy_budget=1.2 * e_min)
    best = oracle.brute_force(net, g).best_solution.gain
    gr = greedy.greedy_solve(net, g).gain
    assert best >= gr - 1e-9 >= -1e-9


def test_brute_force_infeasible(bt7):
    with pytest.raises(Infeasible):
        oracle.brute_force(bt7, TABLE2_GLOBALS.replace(energy_budget=0.0))


def test_result_reevaluates_and_is_deterministic():
    net, g = random_contended_instance(4)
    a = oracle.brute_force(net, g)
    b = oracle.brute_force(net, g)
    sol = a.best_solution
    assert sol.gain == cost.gain(net, sol.delta, sol.cache)
    assert np.array_equal(sol.delta.values, b.best_solution.delta.values)
    assert sol.cache == b.best_solution.cache
    assert a.upper_bound >= sol.gain


def test_tie_goes_to_first_plan(loose_globals):
    # every plan caching at the sink reaches the bound; the first enumerated wins
    net = table2_tree(1, cache_capacity=1e9)
    res = oracle.brute_force(net, loose_globals, 10)
    assert res.best_solution.gain == cost.latency_upper_bound(net)
    winners = [
        p for p in oracle.enumerate_cache_plans(net)
        if oracle.optimize_compression_given_cache(net, loose_globals, p, 10)[1] == res.best_solution.gain
    ]
    assert res.best_solution.cache == winners[0]


def test_dual_bounds_are_upper_bounds():
    for seed in range(6):
        net, g = random_contended_instance(seed)
        combos = np.array(list(np.ndindex(*[net.depth(k) + 2 for k in net.leaves]))) - 1
        b = oracle._plan_arrays(net, combos)
        ub = oracle.dual_bounds(net, g, b)
        cheap = oracle.dual_bounds(net, g, b, rounds=1, caches=False)
        for p in range(0, len(b), max(1, len(b) // 10)):
            try:
                _, gain = oracle.optimize_compression_given_cache(net, g, b[p])
            except Infeasible:
                continue
            assert ub[p] >= gain * (1 - 1e-9) - 1e-6
            assert cheap[p] >= gain * (1 - 1e-9) - 1e-6


def test_oracle_monotone_in_budget():
    for seed in range(4):
        net, g = random_contended_instance(seed)
        gains = [
            oracle.brute_force(net, g.replace(energy_budget=g.energy_budget * s)).best_solution.gain
            for s in (1.0, 1.1, 1.5)
        ]
        assert all(b >= a * (1 - 1e-6) for a, b in zip(gains, gains[1:]))


def test_oracle_monotone_in_nested_grid():
    net, g = random_contended_instance(2)
    gains = [oracle.brute_force(net, g, levels).best_solution.gain for levels in (10, 19, 37)]
    assert all(b >= a * (1 - 1e-6) for a, b in zip(gains, gains[1:]))


def test_oracle_dominates_other_solvers():
    for seed in range(6):
        net, g = random_contended_instance(seed)
        best = oracle.brute_force(net, g).best_solution.gain
        others = [
            rounding.round_full_pipeline(net, g, SolverSettings(seed=seed)).gain,
            greedy.greedy_solve(net, g).gain,
        ]
        for other in others:
            assert best >= other * (1 - 1e-6)


def test_rate_grid():
    grid = oracle.rate_grid(5)
    assert grid[0] == pytest.approx(1e-3) and grid[-1] == 1.0
    assert np.allclose(np.diff(np.log(grid)), np.log(10) * 3 / 4)
    with pytest.raises(ValueError):
        oracle.rate_grid(1)
