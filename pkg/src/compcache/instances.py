"""Instance generators: the homogeneous benchmark trees and random small trees."""

from __future__ import annotations

import numpy as np

from . import cost
from .model import CachePlan, GlobalParams, TreeNetwork, build_tree, uniform_binary_tree

# Simulation parameters of the homogeneous benchmark.
TABLE2_NODE = dict(
    eps_rx=50e-9,
    eps_tx=200e-9,
    eps_cp=80e-9,
    cache_capacity=120.0,
    data_volume=100.0,
    request_count=1000.0,
    latency=0.6,
)
TABLE2_GLOBALS = GlobalParams(w_ca=1.88e-6, period=10.0, energy_budget=200.0)


def table2_tree(depth: int, **overrides) -> TreeNetwork:
    params = {**TABLE2_NODE, **overrides}
    return uniform_binary_tree(depth, **params)


def random_tree_spec(rng: np.random.Generator, n_nodes: int, max_depth: int = 3) -> dict:
    """Random rooted tree with parameters drawn around the benchmark values."""
    depth = [0]
    parents = [None]
    for v in range(1, n_nodes):
        allowed = [u for u in range(v) if depth[u] < max_depth]
        p = int(rng.choice(allowed))
        parents.append(p)
        depth.append(depth[p] + 1)
    has_child = {p for p in parents if p is not None}
    nodes = []
    for v in range(n_nodes):
        leaf = v not in has_child
        nodes.append({
            "id": v,
            "parent": parents[v],
            "eps_rx": float(rng.uniform(20e-9, 80e-9)),
            "eps_tx": float(rng.uniform(100e-9, 300e-9)),
            "eps_cp": float(rng.uniform(40e-9, 120e-9)),
            "cache_capacity": 0.0,
            "data_volume": float(rng.uniform(50.0, 150.0)) if leaf else 0.0,
            "request_count": float(rng.integers(10, 1001)) if leaf else 0.0,
        })
    edges = [
        {"parent": parents[v], "child": v, "latency": float(rng.uniform(0.2, 1.0))}
        for v in range(1, n_nodes)
    ]
    return {"nodes": nodes, "edge_latency": {"edges": edges}}


def random_contended_instance(seed: int, max_nodes: int = 9, max_depth: int = 3):
    """Small random instance where both the energy budget and caches bind.

    Capacities are a log-uniform 0.1-10% of the data routed through each
    node and the budget is 1.01-1.5 times the least energy needed without
    caching, so the best plan usually stays well below the latency bound.
    """
    rng = np.random.default_rng(seed)
    n_nodes = int(rng.integers(3, max_nodes + 1))
    spec = random_tree_spec(rng, n_nodes, max_depth)
    net = build_tree(spec)
    routed = np.zeros(net.num_nodes)
    for k in net.leaves:
        routed[list(net.paths[k])] += net.nodes[k].data_volume
    for v, node in enumerate(spec["nodes"]):
        node["cache_capacity"] = float(np.exp(rng.uniform(np.log(1e-3), np.log(1e-1))) * routed[v])
    net = build_tree(spec)
    probe = GlobalParams(w_ca=1.88e-6, period=10.0, energy_budget=np.inf)
    _, e_min = cost.min_energy_rates(net, probe, CachePlan.empty(net))
    glob = probe.replace(energy_budget=float(e_min * rng.uniform(1.01, 1.5)))
    return net, glob
