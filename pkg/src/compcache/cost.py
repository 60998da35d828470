"""Energy, latency and gain functionals.

All evaluations are vectorised over the padded ``(K, H + 1)`` plan arrays.
Products over empty ranges are 1 and sums over empty ranges are 0.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from .errors import DeltaOutOfRange
from .model import (
    DELTA_MIN,
    CachePlan,
    CompressionPlan,
    FeasibilityReport,
    GlobalParams,
    NodeParams,
    TreeNetwork,
)

ONE_MINUS_INV_E = 1.0 - np.exp(-1.0)


def per_bit_cost(node: NodeParams, delta: float) -> float:
    """Reception + transmission + compression energy per input bit."""
    if not DELTA_MIN <= delta <= 1.0:
        raise DeltaOutOfRange(f"delta={delta!r} outside [{DELTA_MIN}, 1]")
    return node.eps_rx + node.eps_tx * delta + node.eps_cp * (1.0 / delta - 1.0)


def suffix_products(delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(P, Q)`` with ``P[k,i] = prod_{m>i} delta`` and ``Q[k,i] = prod_{m>=i} delta``.

    Works on any leading batch shape; the last axis is the path position.
    """
    Q = np.flip(np.cumprod(np.flip(delta, -1), axis=-1), -1)
    P = np.ones_like(Q)
    P[..., :-1] = Q[..., 1:]
    return P, Q


def per_bit_costs(net: TreeNetwork, delta: np.ndarray) -> np.ndarray:
    lay = net.layout
    return lay.eps_rx + lay.eps_tx * delta + lay.eps_cp * (1.0 / delta - 1.0)


def _arrays(plan):
    return plan.values if hasattr(plan, "values") else np.asarray(plan, dtype=float)


def caching_coefficients(net: TreeNetwork, globals_: GlobalParams) -> np.ndarray:
    """``w_ca T + (R_k - 1) eps_T`` per (leaf, position); eps_T of the caching node."""
    lay = net.layout
    wT = globals_.w_ca * globals_.period
    return np.where(lay.mask, wT + (lay.R[:, None] - 1.0) * lay.eps_tx, 0.0)


def first_request_energy(net: TreeNetwork, delta_plan, k: int) -> float:
    r = net.leaf_index(k)
    lay = net.layout
    delta = _arrays(delta_plan)
    P, _ = suffix_products(delta[r])
    f = per_bit_costs(net, delta)[r]
    return float(lay.y[r] * np.sum(f * P))


def repeat_request_energy(
    net, globals_, delta_plan, cache_plan, k: int, *, charge_cache_node: bool = True
) -> float:
    """Energy for the ``R_k - 1`` requests following the first one.

    Position ``i`` pays its processing cost times ``1 - sum_{j<i} b_j``, so
    the caching node itself is still charged.  With
    ``charge_cache_node=False`` the factor is ``1 - sum_{j<=i} b_j`` instead,
    which is the form of the one-leaf worked example.  Evaluated literally; a
    plan holding more than one copy makes the factor negative rather than
    being clamped.
    """
    r = net.leaf_index(k)
    lay = net.layout
    Rm1 = lay.R[r] - 1.0
    if Rm1 <= 0:
        return 0.0
    full = _arrays(delta_plan)
    delta = full[r]
    b = _arrays(cache_plan)[r]
    P, Q = suffix_products(delta)
    f = per_bit_costs(net, full)[r]
    upstream = 1.0 - np.cumsum(b)  # 1 - sum_{j<=i} b_j
    if charge_cache_node:
        upstream = upstream + b
    wT = globals_.w_ca * globals_.period
    serve = Q * b * (wT / Rm1 + lay.eps_tx[r])
    return float(lay.y[r] * Rm1 * np.sum(f * P * upstream + serve))


def energy_upper_bound_terms(net, globals_, delta, b) -> np.ndarray:
    """Per-(leaf, position) summands of the energy upper bound."""
    lay = net.layout
    P, Q = suffix_products(delta)
    f = per_bit_costs(net, delta)
    c = caching_coefficients(net, globals_)
    terms = lay.y[:, None] * (lay.R[:, None] * f * P + Q * b * c)
    return np.where(lay.mask, terms, 0.0)


def total_energy(net, globals_, delta_plan, cache_plan, leaves: Iterable[int] | None = None):
    """Return ``(e_total, e_total_ub)``; the bound is the budgeted quantity."""
    delta = _arrays(delta_plan)
    b = _arrays(cache_plan)
    rows = range(net.layout.K) if leaves is None else [net.leaf_index(k) for k in leaves]
    e_total = 0.0
    for r in rows:
        k = net.leaves[r]
        e_total += first_request_energy(net, delta, k)
        e_total += repeat_request_energy(net, globals_, delta, b, k)
    terms = energy_upper_bound_terms(net, globals_, delta, b)
    e_ub = float(terms[list(rows)].sum()) if len(rows) else 0.0
    return e_total, e_ub


def energy_ub(net, globals_, delta_plan, cache_plan) -> float:
    return float(energy_upper_bound_terms(net, globals_, _arrays(delta_plan), _arrays(cache_plan)).sum())


def latency_upper_bound(net: TreeNetwork) -> float:
    return float(net.layout.weights.sum())


def latency(net: TreeNetwork, delta_plan, cache_plan) -> float:
    lay = net.layout
    P, _ = suffix_products(_arrays(delta_plan))
    keep = np.cumprod(1.0 - _arrays(cache_plan), axis=-1)  # prod_{j<=i} (1 - b_j)
    H = lay.H
    return float(np.sum(lay.weights * P[..., :H] * keep[..., :H]))


def gain(net: TreeNetwork, delta_plan, cache_plan) -> float:
    """``L^u - L``, accumulated term by term to avoid cancellation."""
    return float(np.sum(gain_terms(net, _arrays(delta_plan), _arrays(cache_plan)), axis=(-2, -1)))


def gain_terms(net, delta, b) -> np.ndarray:
    lay = net.layout
    P, _ = suffix_products(delta)
    keep = np.cumprod(1.0 - b, axis=-1)
    H = lay.H
    return lay.weights * (1.0 - P[..., :H] * keep[..., :H])


def gain_batch(net, delta, b) -> np.ndarray:
    """Gain for a batch of plans with shape ``(..., K, H+1)``."""
    return np.sum(gain_terms(net, delta, b), axis=(-2, -1))


def gain_approx(net: TreeNetwork, delta_plan, cache_plan) -> float:
    """Surrogate gain with ``prod (1 - b)`` replaced by ``1 - min(1, sum b)``."""
    lay = net.layout
    P, _ = suffix_products(_arrays(delta_plan))
    covered = np.minimum(1.0, np.cumsum(_arrays(cache_plan), axis=-1))
    H = lay.H
    return float(np.sum(lay.weights * (1.0 - P[..., :H] * (1.0 - covered[..., :H]))))


def cache_usage(net: TreeNetwork, delta_plan, cache_plan) -> np.ndarray:
    """Bits stored at every node, shape ``(N,)``."""
    lay = net.layout
    _, Q = suffix_products(_arrays(delta_plan))
    stored = lay.y[:, None] * Q * _arrays(cache_plan)
    usage = np.zeros(net.num_nodes)
    np.add.at(usage, lay.path_nodes[lay.mask], stored[lay.mask])
    return usage


def check_feasibility(net, globals_, delta_plan, cache_plan, rtol: float = 1e-9) -> FeasibilityReport:
    lay = net.layout
    b = _arrays(cache_plan)
    e_ub = energy_ub(net, globals_, delta_plan, cache_plan)
    W = globals_.energy_budget
    energy_ok = e_ub <= W * (1.0 + rtol) or W == np.inf
    used = cache_usage(net, delta_plan, cache_plan)
    cache_ok = used <= lay.capacity * (1.0 + rtol) + 1e-12
    live = np.where(lay.mask, b, 0.0)
    in_box = np.all((live >= -1e-12) & (live <= 1.0 + 1e-12), axis=1)
    copy_ok = (live.sum(axis=1) <= 1.0 + 1e-9) & in_box
    return FeasibilityReport(
        energy_used=e_ub,
        energy_ok=bool(energy_ok),
        cache_used=tuple(float(u) for u in used),
        cache_ok=tuple(bool(ok) for ok in cache_ok),
        copy_ok=tuple(bool(ok) for ok in copy_ok),
    )


@dataclass(frozen=True)
class CostBreakdown:
    e_first: tuple[float, ...]
    e_repeat: tuple[float, ...]
    e_total: float
    e_total_ub: float
    latency: float
    latency_ub: float
    gain: float
    gain_approx: float

    def as_record(self) -> dict[str, float]:
        """Flat record for CSV output; per-leaf energies are summed."""
        rec = asdict(self)
        rec["e_first"] = float(sum(self.e_first))
        rec["e_repeat"] = float(sum(self.e_repeat))
        return rec


def evaluate(net, globals_, delta_plan, cache_plan) -> CostBreakdown:
    e_first = tuple(first_request_energy(net, delta_plan, k) for k in net.leaves)
    e_repeat = tuple(
        repeat_request_energy(net, globals_, delta_plan, cache_plan, k) for k in net.leaves
    )
    e_total, e_ub = total_energy(net, globals_, delta_plan, cache_plan)
    return CostBreakdown(
        e_first=e_first,
        e_repeat=e_repeat,
        e_total=e_total,
        e_total_ub=e_ub,
        latency=latency(net, delta_plan, cache_plan),
        latency_ub=latency_upper_bound(net),
        gain=gain(net, delta_plan, cache_plan),
        gain_approx=gain_approx(net, delta_plan, cache_plan),
    )


def nested_minimum(const, lin, inv, mask) -> tuple[np.ndarray, np.ndarray]:
    """Minimise ``sum_i (const_i + lin_i d_i + inv_i / d_i) prod_{m>i} d_m`` per row.

    The sum nests as ``g_h(d_h) + d_h (g_{h-1}(d_{h-1}) + d_{h-1}(...))`` and
    every ``d >= 0``, so the minimum is found exactly by a sink-to-leaf
    recursion of one-dimensional problems on ``[DELTA_MIN, 1]``.  Arrays have
    shape ``(..., H+1)``; returns ``(delta, minimum)`` with the minimum of
    shape ``(...)``.
    """
    delta = np.ones(mask.shape)
    best = np.zeros(mask.shape[:-1])
    for i in range(mask.shape[-1]):
        live = mask[..., i]
        slope = lin[..., i] + best
        c_inv = inv[..., i]
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.sqrt(c_inv / slope)
        d = np.where(c_inv > 0, d, np.where(slope > 0, DELTA_MIN, 1.0))
        d = np.clip(np.nan_to_num(d, nan=1.0, posinf=1.0), DELTA_MIN, 1.0)
        val = const[..., i] + slope * d + c_inv / d
        best = np.where(live, val, best)
        delta[..., i] = np.where(live, d, 1.0)
    return delta, best


def min_energy_rates(net, globals_, cache_plan) -> tuple[np.ndarray, float]:
    """Reduction rates minimising the energy upper bound for fixed caching.

    Returns ``(delta, minimum)``.
    """
    lay = net.layout
    b = _arrays(cache_plan)
    c = caching_coefficients(net, globals_)
    y, R = lay.y[:, None], lay.R[:, None]
    lin = y * (R * lay.eps_tx + b * c)
    inv = y * R * lay.eps_cp
    const = y * R * (lay.eps_rx - lay.eps_cp)
    delta, best = nested_minimum(const, lin, inv, lay.mask)
    return delta, float(best.sum())
