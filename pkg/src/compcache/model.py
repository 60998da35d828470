"""Tree network, per-node parameters and decision plans.

Every leaf ``k`` owns a root-to-leaf path ``paths[k] = (0, ..., k)``; position
``i`` on that path is the node at tree depth ``i``.  Decision variables are
indexed by ``(leaf, position)``.  Internally all per-path quantities are kept
in padded ``(K, H + 1)`` arrays (``H`` is the maximum leaf depth), which is
what the cost and solver modules operate on.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Literal, Mapping

import numpy as np

from .errors import (
    CycleDetected,
    InvalidParameter,
    MissingLatency,
    MultipleRoots,
    NonLeafWithData,
    OrphanNode,
    TopologyError,
    UnknownLeaf,
)

# Floor on data reduction rates; the compression cost eps_C / delta diverges at 0.
DELTA_MIN = 1e-3

SINK = 0


@dataclass(frozen=True)
class NodeParams:
    eps_rx: float
    eps_tx: float
    eps_cp: float
    cache_capacity: float
    data_volume: float = 0.0
    request_count: float = 0.0

    def __post_init__(self):
        for name in ("eps_rx", "eps_tx", "eps_cp", "cache_capacity"):
            value = getattr(self, name)
            if not value >= 0 or math.isnan(value):
                raise InvalidParameter(f"{name} must be >= 0, got {value!r}")
        if self.data_volume < 0 or self.request_count < 0:
            raise InvalidParameter("data_volume and request_count must be >= 0")


@dataclass(frozen=True)
class GlobalParams:
    """Network-wide constants.

    ``energy_budget`` may be 0 (nothing is feasible) or ``inf`` (unconstrained).
    """

    w_ca: float
    period: float
    energy_budget: float

    def __post_init__(self):
        if not (self.w_ca > 0 and self.period > 0):
            raise InvalidParameter("w_ca and period must be > 0")
        if not self.energy_budget >= 0:
            raise InvalidParameter("energy_budget must be >= 0")

    def replace(self, **changes) -> "GlobalParams":
        data = {"w_ca": self.w_ca, "period": self.period, "energy_budget": self.energy_budget}
        data.update(changes)
        return GlobalParams(**data)


@dataclass(frozen=True)
class Layout:
    """Padded array view of a network; positions beyond ``depth[k]`` are inert."""

    leaf_ids: np.ndarray  # (K,)
    depth: np.ndarray  # (K,) h(k)
    mask: np.ndarray  # (K, H+1) position exists on the path
    edge_mask: np.ndarray  # (K, H) edge (i, i+1) exists
    path_nodes: np.ndarray  # (K, H+1) node id, -1 on padding
    y: np.ndarray  # (K,)
    R: np.ndarray  # (K,)
    lat: np.ndarray  # (K, H) latency of edge (i, i+1)
    eps_rx: np.ndarray  # (K, H+1)
    eps_tx: np.ndarray
    eps_cp: np.ndarray
    capacity: np.ndarray  # (N,)

    @property
    def K(self) -> int:
        return len(self.leaf_ids)

    @property
    def H(self) -> int:
        return self.mask.shape[1] - 1

    @property
    def weights(self) -> np.ndarray:
        """Per-edge uncompressed latency ``y_k R_k l_{i,i+1}``, shape (K, H)."""
        return self.y[:, None] * self.R[:, None] * self.lat


@dataclass(frozen=True, eq=True)
class TreeNetwork:
    """Immutable rooted tree; node 0 is the sink."""

    nodes: tuple[NodeParams, ...]
    children: Mapping[int, tuple[int, ...]]
    leaves: tuple[int, ...]
    paths: Mapping[int, tuple[int, ...]]
    edge_latency: Mapping[tuple[int, int], float]
    parents: tuple[int, ...] = field(repr=False, default=())

    def __hash__(self):
        return hash((self.nodes, self.leaves))

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def depth(self, k: int) -> int:
        try:
            return len(self.paths[k]) - 1
        except KeyError:
            raise UnknownLeaf(k) from None

    def leaf_index(self, k: int) -> int:
        try:
            return self._leaf_pos[k]
        except KeyError:
            raise UnknownLeaf(k) from None

    @cached_property
    def _leaf_pos(self) -> dict[int, int]:
        return {k: idx for idx, k in enumerate(self.leaves)}

    def leaves_through(self, v: int) -> list[int]:
        """Leaves whose path passes through ``v`` (the set C_v)."""
        return [k for k in self.leaves if v in self.paths[k]]

    def node_depth(self, v: int) -> int:
        d = 0
        while self.parents[v] >= 0:
            v = self.parents[v]
            d += 1
        return d

    @cached_property
    def layout(self) -> Layout:
        K = len(self.leaves)
        H = max(len(self.paths[k]) - 1 for k in self.leaves)
        depth = np.array([len(self.paths[k]) - 1 for k in self.leaves], dtype=int)
        pos = np.arange(H + 1)
        mask = pos[None, :] <= depth[:, None]
        edge_mask = pos[None, :H] < depth[:, None]
        path_nodes = np.full((K, H + 1), -1, dtype=int)
        lat = np.zeros((K, H))
        eps = np.zeros((3, K, H + 1))
        for r, k in enumerate(self.leaves):
            path = self.paths[k]
            path_nodes[r, : len(path)] = path
            for i, v in enumerate(path):
                p = self.nodes[v]
                eps[:, r, i] = (p.eps_rx, p.eps_tx, p.eps_cp)
            for i in range(len(path) - 1):
                lat[r, i] = self.edge_latency[(path[i], path[i + 1])]
        y = np.array([self.nodes[k].data_volume for k in self.leaves], dtype=float)
        R = np.array([self.nodes[k].request_count for k in self.leaves], dtype=float)
        cap = np.array([p.cache_capacity for p in self.nodes], dtype=float)
        arrays = dict(
            leaf_ids=np.array(self.leaves, dtype=int), depth=depth, mask=mask,
            edge_mask=edge_mask, path_nodes=path_nodes, y=y, R=R, lat=lat,
            eps_rx=eps[0], eps_tx=eps[1], eps_cp=eps[2], capacity=cap,
        )
        for a in arrays.values():
            a.setflags(write=False)
        return Layout(**arrays)

    @cached_property
    def node_slots(self) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
        """For each node, the ``(leaf rows, positions)`` of the plan entries stored there."""
        pn = self.layout.path_nodes
        return tuple(np.nonzero(pn == v) for v in range(len(self.nodes)))

    def to_spec(self, globals_: GlobalParams | None = None) -> dict[str, Any]:
        """Serialize to the JSON-compatible topology schema."""
        nodes = []
        for v, p in enumerate(self.nodes):
            nodes.append({
                "id": v,
                "parent": None if self.parents[v] < 0 else self.parents[v],
                "eps_rx": p.eps_rx,
                "eps_tx": p.eps_tx,
                "eps_cp": p.eps_cp,
                "cache_capacity": p.cache_capacity,
                "data_volume": p.data_volume,
                "request_count": p.request_count,
            })
        edges = [
            {"parent": a, "child": b, "latency": lat}
            for (a, b), lat in sorted(self.edge_latency.items())
        ]
        spec: dict[str, Any] = {"nodes": nodes, "edge_latency": {"edges": edges}}
        if globals_ is not None:
            spec["global"] = {
                "w_ca": globals_.w_ca,
                "period": globals_.period,
                "energy_budget": globals_.energy_budget,
            }
        return spec


_NODE_FIELDS = ("eps_rx", "eps_tx", "eps_cp", "cache_capacity", "data_volume", "request_count")


def build_tree(spec: Mapping[str, Any]) -> TreeNetwork:
    """Validate a topology description and return a :class:`TreeNetwork`.

    ``spec["nodes"]`` lists ``{id, parent, eps_rx, eps_tx, eps_cp,
    cache_capacity, data_volume, request_count}`` records (missing fields are
    taken from ``spec["node_defaults"]``).  ``spec["edge_latency"]`` is a
    number, or ``{"default": x, "edges": [{parent, child, latency}, ...]}``.

    Node ids are kept when they already are ``0..N-1`` with the root at 0;
    otherwise nodes are relabelled in breadth-first order from the root.
    """
    raw_nodes = list(spec.get("nodes", ()))
    defaults = dict(spec.get("node_defaults", {}))
    if len(raw_nodes) < 2:
        raise TopologyError("a network needs a sink and at least one leaf")

    ids = [n["id"] for n in raw_nodes]
    if len(set(ids)) != len(ids):
        raise TopologyError("duplicate node ids")
    idset = set(ids)
    parent_of = {}
    for n in raw_nodes:
        p = n.get("parent")
        if p == n["id"]:
            raise CycleDetected(f"node {n['id']!r} is its own parent")
        if p is not None and p not in idset:
            raise OrphanNode(f"node {n['id']!r} has unknown parent {p!r}")
        parent_of[n["id"]] = p
    roots = [i for i in ids if parent_of[i] is None]
    if not roots:
        raise CycleDetected("no root: parent links form a cycle")
    if len(roots) > 1:
        raise MultipleRoots(f"nodes {roots!r} have no parent")
    root = roots[0]

    kids: dict[Any, list] = {i: [] for i in ids}
    for i in ids:
        if parent_of[i] is not None:
            kids[parent_of[i]].append(i)
    order = []
    queue = deque([root])
    while queue:
        v = queue.popleft()
        order.append(v)
        queue.extend(kids[v])
    if len(order) != len(ids):
        unreached = sorted(set(ids) - set(order), key=ids.index)
        raise CycleDetected(f"nodes {unreached!r} are not reachable from the root")

    if root == 0 and idset == set(range(len(ids))):
        relabel = {i: i for i in ids}
    else:
        relabel = {old: new for new, old in enumerate(order)}

    by_id = {n["id"]: n for n in raw_nodes}
    N = len(ids)
    nodes: list[NodeParams] = [None] * N  # type: ignore[list-item]
    parents = [-1] * N
    children: dict[int, tuple[int, ...]] = {}
    for old in ids:
        new = relabel[old]
        rec = {**defaults, **by_id[old]}
        is_leaf = not kids[old]
        params = {}
        for name in _NODE_FIELDS:
            if name in rec:
                params[name] = float(rec[name])
            elif name in ("data_volume", "request_count") and not is_leaf:
                params[name] = 0.0
            else:
                raise InvalidParameter(f"node {old!r} is missing {name}")
        if is_leaf:
            if not params["data_volume"] > 0 or not params["request_count"] >= 1:
                raise InvalidParameter(
                    f"leaf {old!r} needs data_volume > 0 and request_count >= 1"
                )
        elif params["data_volume"] != 0 or params["request_count"] != 0:
            raise NonLeafWithData(f"non-leaf node {old!r} carries data or requests")
        nodes[new] = NodeParams(**params)
        parents[new] = -1 if parent_of[old] is None else relabel[parent_of[old]]
        children[new] = tuple(sorted(relabel[c] for c in kids[old]))

    edge_latency = _parse_latency(spec.get("edge_latency"), parents, relabel)

    leaves = tuple(v for v in range(N) if not children[v])
    paths = {}
    for k in leaves:
        path = [k]
        while parents[path[-1]] >= 0:
            path.append(parents[path[-1]])
        paths[k] = tuple(reversed(path))
    return TreeNetwork(
        nodes=tuple(nodes),
        children=children,
        leaves=leaves,
        paths=paths,
        edge_latency=edge_latency,
        parents=tuple(parents),
    )


def _parse_latency(raw, parents, relabel) -> dict[tuple[int, int], float]:
    default = None
    per_edge: dict[tuple[int, int], float] = {}
    if isinstance(raw, (int, float)):
        default = float(raw)
    elif isinstance(raw, Mapping):
        default = raw.get("default")
        for e in raw.get("edges", ()):
            try:
                key = (relabel[e["parent"]], relabel[e["child"]])
            except KeyError:
                raise TopologyError(f"latency given for unknown edge {e!r}") from None
            per_edge[key] = float(e["latency"])
    elif raw is not None:
        raise TopologyError("edge_latency must be a number or a mapping")
    out = {}
    for child, parent in enumerate(parents):
        if parent < 0:
            continue
        key = (parent, child)
        if key in per_edge:
            value = per_edge[key]
        elif default is not None:
            value = float(default)
        else:
            raise MissingLatency(f"no latency for edge {key}")
        if not value > 0 or not math.isfinite(value):
            raise InvalidParameter(f"latency of edge {key} must be finite and > 0")
        out[key] = value
    extra = set(per_edge) - set(out)
    if extra:
        raise TopologyError(f"latency given for non-edges {sorted(extra)}")
    return out


def parse_globals(raw: Mapping[str, Any]) -> GlobalParams:
    return GlobalParams(
        w_ca=float(raw["w_ca"]),
        period=float(raw["period"]),
        energy_budget=float(raw["energy_budget"]),
    )


def load_instance(source: str | Path | Mapping[str, Any]) -> tuple[TreeNetwork, GlobalParams]:
    """Read a topology file (or already-parsed mapping) with a ``global`` block."""
    if not isinstance(source, Mapping):
        source = json.loads(Path(source).read_text())
    return build_tree(source), parse_globals(source["global"])


def uniform_binary_tree(
    depth: int,
    *,
    eps_rx: float,
    eps_tx: float,
    eps_cp: float,
    cache_capacity: float,
    data_volume: float,
    request_count: float,
    latency: float,
) -> TreeNetwork:
    """Complete binary tree with ``2**(depth+1) - 1`` identical nodes."""
    if depth < 1:
        raise InvalidParameter("depth must be >= 1")
    n = 2 ** (depth + 1) - 1
    first_leaf = 2**depth - 1
    nodes = []
    for v in range(n):
        leaf = v >= first_leaf
        nodes.append({
            "id": v,
            "parent": None if v == 0 else (v - 1) // 2,
            "data_volume": data_volume if leaf else 0.0,
            "request_count": request_count if leaf else 0.0,
        })
    return build_tree({
        "nodes": nodes,
        "node_defaults": {
            "eps_rx": eps_rx,
            "eps_tx": eps_tx,
            "eps_cp": eps_cp,
            "cache_capacity": cache_capacity,
        },
        "edge_latency": latency,
    })


# ---------------------------------------------------------------------------
# Plans


def _padded(net: TreeNetwork, values, fill: float) -> np.ndarray:
    lay = net.layout
    arr = np.array(values, dtype=float)
    if arr.shape != lay.mask.shape:
        raise InvalidParameter(f"plan shape {arr.shape} != {lay.mask.shape}")
    arr = np.where(lay.mask, arr, fill)
    arr.setflags(write=False)
    return arr


def _from_mapping(net: TreeNetwork, mapping: Mapping[tuple[int, int], float], fill: float):
    lay = net.layout
    arr = np.full(lay.mask.shape, np.nan)
    for (k, i), value in mapping.items():
        r = net.leaf_index(k)
        if not 0 <= i <= lay.depth[r]:
            raise InvalidParameter(f"position {i} not on the path of leaf {k}")
        arr[r, i] = value
    if np.isnan(arr[lay.mask]).any():
        raise InvalidParameter("mapping does not cover every (leaf, position)")
    return np.where(lay.mask, arr, fill)


def _to_mapping(net: TreeNetwork, arr: np.ndarray) -> dict[tuple[int, int], float]:
    lay = net.layout
    return {
        (int(k), i): float(arr[r, i])
        for r, k in enumerate(lay.leaf_ids)
        for i in range(lay.depth[r] + 1)
    }


@dataclass(frozen=True, eq=False)
class CompressionPlan:
    """Data reduction rates ``delta[k, i]`` in ``[DELTA_MIN, 1]``."""

    net: TreeNetwork = field(repr=False)
    values: np.ndarray

    def __post_init__(self):
        arr = _padded(self.net, self.values, 1.0)
        live = arr[self.net.layout.mask]
        if not np.all((live >= DELTA_MIN) & (live <= 1.0)):
            raise InvalidParameter(
                f"reduction rates must lie in [{DELTA_MIN}, 1]; got range "
                f"[{live.min()}, {live.max()}]"
            )
        object.__setattr__(self, "values", arr)

    @classmethod
    def uniform(cls, net: TreeNetwork, value: float = 1.0) -> "CompressionPlan":
        return cls(net, np.full(net.layout.mask.shape, float(value)))

    @classmethod
    def from_mapping(cls, net, mapping) -> "CompressionPlan":
        return cls(net, _from_mapping(net, mapping, 1.0))

    @classmethod
    def from_log(cls, net, tau) -> "CompressionPlan":
        vals = np.exp(np.asarray(tau, dtype=float))
        return cls(net, np.clip(vals, DELTA_MIN, 1.0))

    def to_mapping(self) -> dict[tuple[int, int], float]:
        return _to_mapping(self.net, self.values)

    def __getitem__(self, key: tuple[int, int]) -> float:
        k, i = key
        return float(self.values[self.net.leaf_index(k), i])

    def __eq__(self, other):
        return isinstance(other, CompressionPlan) and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class CachePlan:
    """Caching decisions ``b[k, i]``; binary or relaxed to ``[0, 1]``.

    With ``check=False`` the one-copy constraint is not enforced, which lets
    callers evaluate arbitrary indicator vectors (the cost functions are
    defined literally on such inputs).
    """

    net: TreeNetwork = field(repr=False)
    values: np.ndarray
    mode: Literal["binary", "relaxed"] = "relaxed"
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        arr = _padded(self.net, self.values, 0.0)
        live = arr[self.net.layout.mask]
        if self.mode == "binary":
            if not np.all((live == 0.0) | (live == 1.0)):
                raise InvalidParameter("binary cache plan must hold 0/1 values")
        elif self.mode == "relaxed":
            if not np.all((live >= 0.0) & (live <= 1.0)):
                raise InvalidParameter("relaxed cache values must lie in [0, 1]")
        else:
            raise InvalidParameter(f"unknown cache plan mode {self.mode!r}")
        if self.check and np.any(arr.sum(axis=1) > 1.0 + 1e-9):
            raise InvalidParameter("more than one cached copy for some leaf")
        object.__setattr__(self, "values", arr)

    @classmethod
    def empty(cls, net: TreeNetwork, mode="binary") -> "CachePlan":
        return cls(net, np.zeros(net.layout.mask.shape), mode)

    @classmethod
    def at_positions(cls, net: TreeNetwork, positions: Mapping[int, int | None]) -> "CachePlan":
        """Binary plan caching leaf ``k`` at path position ``positions[k]``."""
        arr = np.zeros(net.layout.mask.shape)
        for k, i in positions.items():
            if i is None:
                continue
            r = net.leaf_index(k)
            if not 0 <= i <= net.layout.depth[r]:
                raise InvalidParameter(f"position {i} not on the path of leaf {k}")
            arr[r, i] = 1.0
        return cls(net, arr, "binary")

    @classmethod
    def from_mapping(cls, net, mapping, mode="relaxed", check=True) -> "CachePlan":
        return cls(net, _from_mapping(net, mapping, 0.0), mode, check)

    def to_mapping(self) -> dict[tuple[int, int], float]:
        return _to_mapping(self.net, self.values)

    def positions(self) -> dict[int, int | None]:
        """Cached position per leaf for a binary plan (``None`` = not cached)."""
        out = {}
        for r, k in enumerate(self.net.leaves):
            hits = np.flatnonzero(self.values[r] == 1.0)
            out[k] = int(hits[0]) if len(hits) else None
        return out

    @property
    def is_integral(self) -> bool:
        live = self.values[self.net.layout.mask]
        return bool(np.all((live == 0.0) | (live == 1.0)))

    def as_binary(self) -> "CachePlan":
        return CachePlan(self.net, self.values, "binary", self.check)

    def __getitem__(self, key: tuple[int, int]) -> float:
        k, i = key
        return float(self.values[self.net.leaf_index(k), i])

    def __eq__(self, other):
        return (
            isinstance(other, CachePlan)
            and self.mode == other.mode
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class FeasibilityReport:
    energy_used: float
    energy_ok: bool
    cache_used: tuple[float, ...]
    cache_ok: tuple[bool, ...]
    copy_ok: tuple[bool, ...]

    @property
    def feasible(self) -> bool:
        return self.energy_ok and all(self.cache_ok) and all(self.copy_ok)

    def violations(self) -> list[str]:
        out = []
        if not self.energy_ok:
            out.append(f"energy {self.energy_used:.6g}")
        out += [f"cache@{v}" for v, ok in enumerate(self.cache_ok) if not ok]
        out += [f"copies@leaf#{r}" for r, ok in enumerate(self.copy_ok) if not ok]
        return out


def iter_leaf_positions(net: TreeNetwork) -> Iterable[tuple[int, int]]:
    for k in net.leaves:
        for i in range(len(net.paths[k])):
            yield k, i
