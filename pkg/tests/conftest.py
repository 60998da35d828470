from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from compcache import build_tree, cost  # noqa: E402
from compcache.instances import TABLE2_GLOBALS, TABLE2_NODE, random_tree_spec, table2_tree  # noqa: E402
from compcache.model import DELTA_MIN, CachePlan, CompressionPlan, GlobalParams  # noqa: E402


def chain(y=100.0, R=1000.0, latency=0.6, capacity=120.0, **eps):
    """Sink plus a single leaf with benchmark energies."""
    node = {
        "eps_rx": eps.get("eps_rx", TABLE2_NODE["eps_rx"]),
        "eps_tx": eps.get("eps_tx", TABLE2_NODE["eps_tx"]),
        "eps_cp": eps.get("eps_cp", TABLE2_NODE["eps_cp"]),
        "cache_capacity": capacity,
    }
    return build_tree({
        "nodes": [
            {"id": 0, "parent": None, **node},
            {"id": 1, "parent": 0, **node, "data_volume": y, "request_count": R},
        ],
        "edge_latency": latency,
    })


def random_net(rng, n_min=3, n_max=9, max_depth=3, capacity=None):
    spec = random_tree_spec(rng, int(rng.integers(n_min, n_max + 1)), max_depth)
    for node in spec["nodes"]:
        node["cache_capacity"] = float(rng.uniform(0.0, 150.0)) if capacity is None else capacity
    return build_tree(spec)


def small_shapes(max_leaves=3):
    """Parent lists of every rooted tree with depth <= 2 and at most ``max_leaves`` leaves."""
    shapes = []

    def grow(kids, min_size):
        # kids: leaf counts under each depth-1 child (0 means the child is a leaf)
        if kids:
            parents = [None] + [0] * len(kids)
            for c, n in enumerate(kids):
                parents += [c + 1] * n
            shapes.append(parents)
        used = sum(max(n, 1) for n in kids)
        for n in range(min_size, max_leaves + 1):
            if used + max(n, 1) <= max_leaves:
                grow(kids + [n], n)

    grow([], 0)
    return shapes


def tree_from_parents(parents, rng, capacity=120.0):
    """Tree with the given shape and random energies, volumes, requests and latencies."""
    has_child = {p for p in parents if p is not None}
    nodes, edges = [], []
    for v, p in enumerate(parents):
        leaf = v not in has_child
        nodes.append({
            "id": v, "parent": p,
            "eps_rx": float(rng.uniform(20e-9, 80e-9)),
            "eps_tx": float(rng.uniform(100e-9, 300e-9)),
            "eps_cp": float(rng.uniform(40e-9, 120e-9)),
            "cache_capacity": capacity,
            "data_volume": float(rng.uniform(50.0, 150.0)) if leaf else 0.0,
            "request_count": float(rng.integers(10, 1001)) if leaf else 0.0,
        })
        if p is not None:
            edges.append({"parent": p, "child": v, "latency": float(rng.uniform(0.2, 1.0))})
    return build_tree({"nodes": nodes, "edge_latency": {"edges": edges}})


def random_delta(net, rng):
    mask = net.layout.mask
    vals = np.exp(rng.uniform(np.log(DELTA_MIN), 0.0, size=mask.shape))
    return CompressionPlan(net, np.where(mask, vals, 1.0))


def random_relaxed(net, rng, total=None):
    """Relaxed caching with per-leaf sums in [0, 1] (Dirichlet with a slack slot)."""
    lay = net.layout
    b = np.zeros(lay.mask.shape)
    for r in range(lay.K):
        h = int(lay.depth[r])
        w = rng.dirichlet(np.ones(h + 2))
        b[r, : h + 1] = w[: h + 1] if total is None else total * w[: h + 1] / w[: h + 1].sum()
    return CachePlan(net, b, "relaxed")


def random_binary(net, rng):
    lay = net.layout
    pos = {k: (None if rng.random() < 0.3 else int(rng.integers(0, lay.depth[r] + 1)))
           for r, k in enumerate(net.leaves)}
    return CachePlan.at_positions(net, pos)


def cache_gain_table(net, delta):
    """Gain for every subset of (leaf, position) slots, indexed by bitmask."""
    slots = np.argwhere(net.layout.mask)
    n = len(slots)
    masks = np.arange(2**n)
    b = np.zeros((2**n,) + net.layout.mask.shape)
    for bit, (r, i) in enumerate(slots):
        b[:, r, i] = (masks >> bit) & 1
    return cost.gain_batch(net, delta, b), n


def diminishing_returns_gap(values, n):
    """Least f(A+x) - f(A) - (f(B+x) - f(B)) over all A subset of B, x outside B."""
    worst = np.inf
    full = 2**n - 1
    for B in range(2**n):
        # every subset A of B, enumerated as submasks
        A = B
        subs = []
        while True:
            subs.append(A)
            if A == 0:
                break
            A = (A - 1) & B
        subs = np.array(subs)
        free = full & ~B
        for x in range(n):
            bit = 1 << x
            if free & bit:
                gap = (values[subs | bit] - values[subs]) - (values[B | bit] - values[B])
                worst = min(worst, float(gap.min()))
    return worst


# acceptance lines collected by the tests and echoed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def bt7():
    return table2_tree(2)


@pytest.fixture(scope="session")
def table2_globals():
    return TABLE2_GLOBALS


@pytest.fixture(scope="session")
def loose_globals():
    return GlobalParams(w_ca=1.88e-6, period=10.0, energy_budget=float("inf"))


def pipage_case(seed, capacity="benchmark"):
    """Random tree, rates and feasible relaxed caching for rounding tests.

    ``capacity="benchmark"`` gives every node 120 bits and W = 200;
    ``"wide"`` draws capacities from U(0, 150) and a budget 1-1.2 times
    the energy of the relaxed plan, so caches and energy often bind.
    The relaxed plan is scaled down if it overflows any cache.
    """
    rng = np.random.default_rng(seed)
    spec = random_tree_spec(rng, int(rng.integers(3, 10)), 3)
    for node in spec["nodes"]:
        node["cache_capacity"] = 120.0 if capacity == "benchmark" else float(rng.uniform(0.0, 150.0))
    net = build_tree(spec)
    lay = net.layout
    delta = random_delta(net, rng).values
    b = random_relaxed(net, rng).values
    used = cost.cache_usage(net, delta, b)
    scale = np.min(np.where(used > 0, lay.capacity / np.maximum(used, 1e-300), np.inf))
    if scale < 1:
        b = b * scale
    g = GlobalParams(w_ca=1.88e-6, period=10.0, energy_budget=np.inf)
    if capacity == "benchmark":
        W = TABLE2_GLOBALS.energy_budget
    else:
        W = cost.energy_ub(net, g, delta, b) * float(rng.uniform(1.0, 1.2))
    return net, g.replace(energy_budget=W), delta, b
