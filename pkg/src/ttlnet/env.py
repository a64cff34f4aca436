"""Slotted queue environment with per-packet lifetimes.

Queues are kept per (node, traffic unit, remaining lifetime). A traffic unit
is either a path (packets committed to a route at the source) or a bare
commodity (packets free to take any declared link, as distributed policies
require). Each slot every packet loses one lifetime unit, whether it is held
or in flight; packets landing with zero lifetime are removed as expired, and
packets landing at their destination with positive lifetime are consumed as
on-time deliveries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Commodity, NetworkGraph, Path


class InfeasibleAction(Exception):
    """An action violated availability or capacity limits.

    Raised instead of clipping: producing only in-budget actions is the
    policy layer's job, so a violation here means a bug upstream.
    """


@dataclass
class QueueState:
    """Backlogs q[node, unit, lifetime] plus the current slot index.

    Lifetime axis has length L_max + 1; bucket 0 exists only to make
    indexing uniform and must stay identically zero.
    """

    q: np.ndarray
    t: int = 0

    def copy(self) -> "QueueState":
        return QueueState(self.q.copy(), self.t)

    def total(self) -> int:
        return int(self.q.sum())


@dataclass
class NetAction:
    """One slot's control decision, in network-level form.

    blocks: active resource blocks per link, indexed like LifetimeEnv.links.
    flows: (node_i, node_j, unit, lifetime) -> packets sent over (i, j).
    drops: (node_i, unit, lifetime) -> packets proactively removed.
    route: packets assigned to each traffic unit out of this slot's arrivals
           (path-keyed runs only; commodity-keyed runs inject implicitly).
    """

    blocks: np.ndarray
    flows: dict[tuple[int, int, int, int], int] = field(default_factory=dict)
    drops: dict[tuple[int, int, int], int] = field(default_factory=dict)
    route: np.ndarray | None = None

    def sent(self, i: int, k: int) -> int:
        return sum(n for (a, _, u, _), n in self.flows.items() if a == i and u == k)

    def dropped(self, i: int, k: int) -> int:
        return sum(n for (a, u, _), n in self.drops.items() if a == i and u == k)


@dataclass
class StepOutcome:
    """Result of advancing the environment by one slot."""

    state: QueueState
    delivered: np.ndarray  # on-time deliveries per commodity
    expired: int
    dropped: int
    cost: float
    cost_norm: float


def resolve_lowest_lifetime(
    buckets: np.ndarray, drop_count: int, send_count: int
) -> tuple[dict[int, int], dict[int, int]]:
    """Split aggregate drop/send counts across lifetime buckets.

    Packets closest to expiry go first: drops consume the lowest lifetimes,
    sends consume the lowest lifetimes that remain. Requires
    drop_count + send_count <= buckets.sum().
    """
    remaining = buckets.astype(np.int64).copy()
    drops: dict[int, int] = {}
    need = drop_count
    for ell in range(1, len(remaining)):
        if need == 0:
            break
        take = min(need, int(remaining[ell]))
        if take:
            drops[ell] = take
            remaining[ell] -= take
            need -= take
    sends: dict[int, int] = {}
    need = send_count
    for ell in range(1, len(remaining)):
        if need == 0:
            break
        take = min(need, int(remaining[ell]))
        if take:
            sends[ell] = take
            remaining[ell] -= take
            need -= take
    if need or drop_count - sum(drops.values()):
        raise ValueError("drop/send counts exceed available backlog")
    return drops, sends


class LifetimeEnv:
    """Slotted network with lifetime queues and Poisson packet arrivals.

    One instance is single-threaded; run several instances with independent
    RNGs for parallel collection.
    """

    def __init__(
        self,
        graph: NetworkGraph,
        commodities: list[Commodity],
        paths: list[Path] | None = None,
        rng: np.random.Generator | None = None,
    ):
        self.graph = graph
        self.commodities = list(commodities)
        self.paths = list(paths) if paths is not None else None
        self.node_index = {n: ix for ix, n in enumerate(graph.nodes)}
        self.links = graph.sorted_links()
        self.link_index = {lk: ix for ix, lk in enumerate(self.links)}
        self.n_nodes = len(graph.nodes)
        self.n_commodities = len(commodities)
        self.lifetime_cap = max((c.lifetime for c in commodities), default=1)
        self._max_cost = graph.max_cost()
        self._rng = rng if rng is not None else np.random.default_rng()

        if self.paths is not None:
            for k, p in enumerate(self.paths):
                if p.path_id != k:
                    raise ValueError("paths must be listed in path_id order")
            self.unit_commodity = np.array([p.commodity for p in self.paths], dtype=np.int64)
            self.unit_source = np.array(
                [self.node_index[p.nodes[0]] for p in self.paths], dtype=np.int64
            )
            self.unit_dest = np.array(
                [self.node_index[p.nodes[-1]] for p in self.paths], dtype=np.int64
            )
            self._next_hop = {}
            for k, p in enumerate(self.paths):
                for a, b in p.links():
                    self._next_hop[(self.node_index[a], k)] = self.node_index[b]
        else:
            self.unit_commodity = np.arange(self.n_commodities, dtype=np.int64)
            self.unit_source = np.array(
                [self.node_index[c.source] for c in commodities], dtype=np.int64
            )
            self.unit_dest = np.array(
                [self.node_index[c.destination] for c in commodities], dtype=np.int64
            )
            self._next_hop = None
        self.n_units = len(self.unit_commodity)
        self.rates = np.array([c.arrival_rate for c in commodities])

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed: int | None = None) -> QueueState:
        """Empty queues at slot zero; optionally reseed the arrival stream."""
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        q = np.zeros((self.n_nodes, self.n_units, self.lifetime_cap + 1), dtype=np.int64)
        return QueueState(q, 0)

    def sample_arrivals(self) -> np.ndarray:
        """Independent Poisson draw of this slot's arrivals per commodity."""
        return self._rng.poisson(self.rates).astype(np.int64)

    # -- action application ------------------------------------------------

    def inject(self, state: QueueState, arrivals: np.ndarray, route: np.ndarray | None) -> QueueState:
        """Add this slot's arrivals to the queues at full lifetime.

        Path-keyed runs need `route` (per-unit counts summing to each
        commodity's arrivals); commodity-keyed runs inject at the source.
        """
        out = state.copy()
        if self.paths is not None:
            if route is None:
                raise InfeasibleAction("path-keyed environment requires route counts")
            route = np.asarray(route, dtype=np.int64)
            if route.shape != (self.n_units,) or (route < 0).any():
                raise InfeasibleAction("route counts must be a non-negative per-path vector")
            for c in range(self.n_commodities):
                assigned = int(route[self.unit_commodity == c].sum())
                if assigned != int(arrivals[c]):
                    raise InfeasibleAction(
                        f"route assigns {assigned} packets of commodity {c}, "
                        f"but {int(arrivals[c])} arrived"
                    )
            for k in range(self.n_units):
                if route[k]:
                    life = self.commodities[self.unit_commodity[k]].lifetime
                    out.q[self.unit_source[k], k, life] += route[k]
        else:
            for c in range(self.n_commodities):
                if arrivals[c]:
                    out.q[self.unit_source[c], c, self.commodities[c].lifetime] += arrivals[c]
        return out

    def validate_action(self, staged: QueueState, action: NetAction) -> None:
        """Check availability and capacity limits against post-arrival queues."""
        blocks = np.asarray(action.blocks)
        if blocks.shape != (len(self.links),):
            raise InfeasibleAction("blocks vector has wrong length")
        for e, (i, j) in enumerate(self.links):
            x = int(blocks[e])
            if x < 0 or x > self.graph.links[(i, j)].max_blocks:
                raise InfeasibleAction(
                    f"blocks on link ({i}, {j}) outside [0, max]: {x}"
                )

        out_totals: dict[tuple[int, int, int], int] = {}
        link_loads = np.zeros(len(self.links), dtype=np.int64)
        for (i, j, k, ell), n in action.flows.items():
            if n < 0:
                raise InfeasibleAction("negative flow count")
            if n == 0:
                continue
            if not (1 <= ell <= self.lifetime_cap) or not (0 <= k < self.n_units):
                raise InfeasibleAction(f"flow at invalid unit/lifetime ({k}, {ell})")
            link = (self.graph.nodes[i], self.graph.nodes[j])
            if link not in self.graph.links:
                raise InfeasibleAction(f"flow over undeclared link {link}")
            if self._next_hop is not None and self._next_hop.get((i, k)) != j:
                raise InfeasibleAction(
                    f"flow sends unit {k} off its path at node {self.graph.nodes[i]}"
                )
            out_totals[(i, k, ell)] = out_totals.get((i, k, ell), 0) + n
            link_loads[self.link_index[link]] += n
        for (i, k, ell), n in action.drops.items():
            if n < 0:
                raise InfeasibleAction("negative drop count")
            if n == 0:
                continue
            if not (1 <= ell <= self.lifetime_cap) or not (0 <= k < self.n_units):
                raise InfeasibleAction(f"drop at invalid unit/lifetime ({k}, {ell})")
            out_totals[(i, k, ell)] = out_totals.get((i, k, ell), 0) + n

        for (i, k, ell), n in out_totals.items():
            if n > staged.q[i, k, ell]:
                raise InfeasibleAction(
                    f"outgoing {n} exceeds backlog {int(staged.q[i, k, ell])} at "
                    f"(node {self.graph.nodes[i]}, unit {k}, lifetime {ell})"
                )
        for e, (i, j) in enumerate(self.links):
            cap = self.graph.links[(i, j)].block_capacity * int(blocks[e])
            if link_loads[e] > cap:
                raise InfeasibleAction(
                    f"load {int(link_loads[e])} exceeds allocated capacity {cap} "
                    f"on link ({i}, {j})"
                )

    def step(self, state: QueueState, action: NetAction, arrivals: np.ndarray) -> StepOutcome:
        """Advance one slot: inject arrivals, apply the action, age all packets."""
        arrivals = np.asarray(arrivals, dtype=np.int64)
        if arrivals.shape != (self.n_commodities,) or (arrivals < 0).any():
            raise InfeasibleAction("arrivals must be a non-negative per-commodity vector")
        staged = self.inject(state, arrivals, action.route)
        self.validate_action(staged, action)

        q = staged.q
        dropped = 0
        for (i, k, ell), n in action.drops.items():
            q[i, k, ell] -= n
            dropped += n
        for (i, j, k, ell), n in action.flows.items():
            q[i, k, ell] -= n

        delivered = np.zeros(self.n_commodities, dtype=np.int64)
        next_q = np.zeros_like(q)
        # held packets age one unit; the lifetime-1 bucket ages to zero and expires
        next_q[:, :, : self.lifetime_cap] = q[:, :, 1:]
        expired = int(next_q[:, :, 0].sum())
        next_q[:, :, 0] = 0
        # in-flight packets land at the receiver one unit older
        for (i, j, k, ell), n in action.flows.items():
            landing = ell - 1
            if j == self.unit_dest[k]:
                if landing >= 1:
                    delivered[self.unit_commodity[k]] += n
                else:
                    expired += n
            elif landing == 0:
                expired += n
            else:
                next_q[j, k, landing] += n

        before = state.total() + int(arrivals.sum())
        after = int(next_q.sum()) + int(delivered.sum()) + expired + dropped
        if before != after:
            raise AssertionError(f"packet conservation broken: {before} != {after}")

        cost, cost_norm = self.cost_m0(action)
        return StepOutcome(
            state=QueueState(next_q, state.t + 1),
            delivered=delivered,
            expired=expired,
            dropped=dropped,
            cost=cost,
            cost_norm=cost_norm,
        )

    # -- per-slot signals ----------------------------------------------------

    def cost_m0(self, action: NetAction) -> tuple[float, float]:
        """Resource cost of the slot and its fraction of the network-wide maximum."""
        cost = 0.0
        for e, (i, j) in enumerate(self.links):
            cost += float(action.blocks[e]) * self.graph.links[(i, j)].block_cost
        norm = cost / self._max_cost if self._max_cost > 0 else 0.0
        return cost, norm

    def throughput_signal(self, outcome: StepOutcome, c: int) -> float:
        """Per-slot constraint signal: delivery ratio above the reliability target.

        Positive when this slot delivered more than the target fraction of the
        mean arrival rate; its discounted sum is the quantity the dual update
        drives to zero.
        """
        rate = self.commodities[c].arrival_rate
        if rate == 0:
            return 0.0
        return float(outcome.delivered[c]) / rate - self.commodities[c].reliability_target

    # -- diagnostics ---------------------------------------------------------

    def check_state(self, state: QueueState) -> None:
        """Assert queue invariants; used by tests and debugging."""
        assert (state.q >= 0).all(), "negative backlog"
        assert (state.q[:, :, 0] == 0).all(), "expired packets present"
        for k in range(self.n_units):
            dest = self.unit_dest[k]
            assert (state.q[dest, k, :] == 0).all(), "backlog at destination"
            if self.paths is not None:
                on_path = {self.node_index[n] for n in self.paths[k].nodes}
                off = [i for i in range(self.n_nodes) if i not in on_path]
                assert (state.q[off, k, :] == 0).all(), "packet off its path"
