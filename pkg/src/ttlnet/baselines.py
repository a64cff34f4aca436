"""Non-learning comparison policies on the same lifetime-queue environment.

Backpressure runs on commodity-keyed queues: every link independently serves
the commodity with the largest positive backlog differential. The max-weight
router/scheduler pair runs on path-keyed queues: arrivals pick the path with
the least virtual congestion, and each link serves its paths in decreasing
backlog order, work-conserving. Both serve packets closest to expiry first
and buy resource blocks on demand, so their costs are accounted identically
to the learned stack's.
"""

from __future__ import annotations

import numpy as np

from .env import LifetimeEnv, NetAction, QueueState, resolve_lowest_lifetime


class BackpressurePolicy:
    """Distributed differential-backlog routing and scheduling.

    Never drops proactively; all its losses are expiries. Expects a
    commodity-keyed environment (paths=None).
    """

    def __init__(self, env: LifetimeEnv):
        if env.paths is not None:
            raise ValueError("backpressure needs a commodity-keyed environment")
        self.env = env

    def step(self, state: QueueState, arrivals: np.ndarray) -> NetAction:
        env = self.env
        staged = env.inject(state, arrivals, None)
        work = staged.q.copy()
        totals = staged.q.sum(axis=2)  # slot-start aggregate backlogs, frozen
        flows: dict[tuple[int, int, int, int], int] = {}
        blocks = np.zeros(len(env.links), dtype=np.int64)
        for e, (i_name, j_name) in enumerate(env.links):
            i = env.node_index[i_name]
            j = env.node_index[j_name]
            weights = totals[i] - totals[j]
            c = int(np.argmax(weights))
            if weights[c] <= 0:
                continue
            params = env.graph.links[(i_name, j_name)]
            n = min(int(work[i, c].sum()), params.capacity)
            if n == 0:
                continue
            _, sends = resolve_lowest_lifetime(work[i, c], 0, n)
            for ell, cnt in sends.items():
                flows[(i, j, c, ell)] = cnt
                work[i, c, ell] -= cnt
            blocks[e] = -(-n // params.block_capacity)
        return NetAction(blocks=blocks, flows=flows, drops={}, route=None)


class MaxWeightPolicy:
    """Centralized source routing over precomputed paths plus per-link
    max-backlog scheduling, with virtual queues steering arrivals away from
    recently loaded links. Expects a path-keyed environment."""

    def __init__(self, env: LifetimeEnv):
        if env.paths is None:
            raise ValueError("max-weight routing needs a path-keyed environment")
        self.env = env
        self.virtual = np.zeros(len(env.links), dtype=np.float64)
        self._path_links = [
            [env.link_index[(a, b)] for a, b in p.links()] for p in env.paths
        ]

    def route(self, arrivals: np.ndarray) -> np.ndarray:
        """Assign each arriving packet to its commodity's least-congested path."""
        env = self.env
        counts = np.zeros(env.n_units, dtype=np.int64)
        for c in range(env.n_commodities):
            members = np.flatnonzero(env.unit_commodity == c)
            for _ in range(int(arrivals[c])):
                costs = [self.virtual[self._path_links[k]].sum() for k in members]
                pick = members[int(np.argmin(costs))]  # argmin ties -> lowest path id
                counts[pick] += 1
                self.virtual[self._path_links[pick]] += 1.0
        return counts

    def step(self, state: QueueState, arrivals: np.ndarray) -> NetAction:
        env = self.env
        route = self.route(arrivals)
        staged = env.inject(state, arrivals, route)
        work = staged.q.copy()
        totals = staged.q.sum(axis=2)
        flows: dict[tuple[int, int, int, int], int] = {}
        blocks = np.zeros(len(env.links), dtype=np.int64)
        for e, (i_name, j_name) in enumerate(env.links):
            i = env.node_index[i_name]
            j = env.node_index[j_name]
            params = env.graph.links[(i_name, j_name)]
            here = [
                k
                for k in range(env.n_units)
                if env._next_hop.get((i, k)) == j and totals[i, k] > 0
            ]
            here.sort(key=lambda k: (-totals[i, k], k))
            room = params.capacity
            sent_total = 0
            for k in here:
                if room == 0:
                    break
                n = min(int(work[i, k].sum()), room)
                if n == 0:
                    continue
                _, sends = resolve_lowest_lifetime(work[i, k], 0, n)
                for ell, cnt in sends.items():
                    flows[(i, j, k, ell)] = flows.get((i, j, k, ell), 0) + cnt
                    work[i, k, ell] -= cnt
                room -= n
                sent_total += n
            if sent_total:
                blocks[e] = -(-sent_total // params.block_capacity)
        # congestion estimates decay by one slot of service each slot
        for e, link in enumerate(env.links):
            cap = env.graph.links[link].capacity
            self.virtual[e] = max(self.virtual[e] - cap, 0.0)
        return NetAction(blocks=blocks, flows=flows, drops={}, route=route)
