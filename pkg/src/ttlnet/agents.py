"""Learned control stack: one central routing actor, per-node scheduling
actors, and one critic over the joint state and action.

Actors emit probability vectors; discrete packet counts come from floor
rules, with remainders and per-link capacity contention settled by fixed
deterministic tie-breaks so replays are exact. The critic scores the flat
network state concatenated with every actor's probability outputs, and each
actor climbs the critic's gradient with respect to its own output slots.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .env import InfeasibleAction, LifetimeEnv, NetAction, QueueState, resolve_lowest_lifetime
from .nn import AdamState, Mlp, adam_step, init_mlp, load_mlp, save_mlp, soft_update

SEND, DROP, HOLD = 0, 1, 2


@dataclass
class ExplorationSchedule:
    """Per-agent chance of acting from a random point on the simplex."""

    decay: float = 0.99
    floor: float = 0.01

    def epsilon(self, k: int) -> float:
        return max(self.decay**k, self.floor)


@dataclass
class AgentLayout:
    """Slot bookkeeping for every observation and action vector.

    The flat state is the backlog tensor (node-major, then unit, then
    lifetime 1..L) followed by per-commodity arrivals. The joint action is
    the routing actor's concatenated per-commodity groups followed by each
    scheduling node's per-path (send, drop, hold) triples, in node order.
    """

    n_nodes: int
    n_units: int
    lifetime_cap: int
    n_commodities: int
    route_groups: list[int]
    sched_nodes: list[int]
    sched_paths: dict[int, list[int]]

    @classmethod
    def from_env(cls, env: LifetimeEnv) -> "AgentLayout":
        if env.paths is None:
            raise ValueError("the learned stack needs a path-keyed environment")
        route_groups = [
            int((env.unit_commodity == c).sum()) for c in range(env.n_commodities)
        ]
        if any(g == 0 for g in route_groups):
            raise ValueError("every commodity needs at least one feasible path")
        sched_paths: dict[int, list[int]] = {}
        for k, p in enumerate(env.paths):
            for name in p.nodes[:-1]:
                sched_paths.setdefault(env.node_index[name], []).append(k)
        sched_nodes = sorted(sched_paths)
        return cls(
            n_nodes=env.n_nodes,
            n_units=env.n_units,
            lifetime_cap=env.lifetime_cap,
            n_commodities=env.n_commodities,
            route_groups=route_groups,
            sched_nodes=sched_nodes,
            sched_paths={i: sorted(ks) for i, ks in sched_paths.items()},
        )

    @property
    def backlog_dim(self) -> int:
        return self.n_nodes * self.n_units * self.lifetime_cap

    @property
    def state_dim(self) -> int:
        return self.backlog_dim + self.n_commodities

    @property
    def route_dim(self) -> int:
        return sum(self.route_groups)

    def sched_in_dim(self, node: int) -> int:
        return len(self.sched_paths[node])

    @property
    def action_dim(self) -> int:
        return self.route_dim + 3 * sum(len(self.sched_paths[i]) for i in self.sched_nodes)

    @property
    def critic_dim(self) -> int:
        return self.state_dim + self.action_dim

    def route_slots(self) -> slice:
        return slice(self.state_dim, self.state_dim + self.route_dim)

    def sched_slots(self, node: int) -> slice:
        start = self.state_dim + self.route_dim
        for i in self.sched_nodes:
            width = 3 * len(self.sched_paths[i])
            if i == node:
                return slice(start, start + width)
            start += width
        raise KeyError(node)

    def flatten_backlog(self, q: np.ndarray) -> np.ndarray:
        return q[:, :, 1:].reshape(q.shape[0] * q.shape[1] * (q.shape[2] - 1))


def route_counts(probs: np.ndarray, groups: list[int], arrivals: np.ndarray) -> np.ndarray:
    """Integer path assignment: floor of arrivals times probability, with the
    remainder going to the most probable path (ties to the lowest id)."""
    out = np.zeros(sum(groups), dtype=np.int64)
    start = 0
    for c, g in enumerate(groups):
        p = probs[start : start + g]
        b = int(arrivals[c])
        floors = np.floor(b * p).astype(np.int64)
        rest = b - int(floors.sum())
        if rest:
            floors[int(np.argmax(p))] += rest
        out[start : start + g] = floors
        start += g
    return out


def batched_route_counts(probs: np.ndarray, groups: list[int], arrivals: np.ndarray) -> np.ndarray:
    """Vectorized route_counts over a batch: probs (B, sum(groups)), arrivals (B, C)."""
    B = probs.shape[0]
    out = np.zeros((B, sum(groups)), dtype=np.int64)
    start = 0
    for c, g in enumerate(groups):
        p = probs[:, start : start + g]
        b = arrivals[:, c].astype(np.int64)
        floors = np.floor(b[:, None] * p).astype(np.int64)
        rest = b - floors.sum(axis=1)
        floors[np.arange(B), np.argmax(p, axis=1)] += rest
        out[:, start : start + g] = floors
        start += g
    return out


def schedule_counts(probs3: np.ndarray, backlog: int) -> tuple[int, int]:
    """Send/drop counts from one (send, drop, hold) probability triple."""
    send = int(np.floor(probs3[SEND] * backlog))
    drop = int(np.floor(probs3[DROP] * backlog))
    return send, drop


def allocate_blocks(sent: int, block_capacity: int, max_blocks: int) -> int:
    """Blocks needed for `sent` packets; it is an error to need more than exist."""
    blocks = -(-sent // block_capacity)  # ceil
    if blocks > max_blocks:
        raise InfeasibleAction(
            f"{sent} packets need {blocks} blocks but only {max_blocks} exist"
        )
    return blocks


@dataclass
class TransitionDraft:
    """Rollout record awaiting its outcome half before entering the buffer."""

    state_q: np.ndarray
    arrivals: np.ndarray
    route_probs: np.ndarray
    sched_obs: np.ndarray
    sched_probs: np.ndarray


class ReplayBuffer:
    """Bounded FIFO of transitions with uniform sampling."""

    def __init__(self, capacity: int, layout: AgentLayout):
        self.capacity = int(capacity)
        self.layout = layout
        obs_dim = sum(len(layout.sched_paths[i]) for i in layout.sched_nodes)
        act_dim = 3 * obs_dim
        shapes = {
            "state_q": layout.backlog_dim,
            "arrivals": layout.n_commodities,
            "route_probs": layout.route_dim,
            "sched_obs": obs_dim,
            "sched_probs": act_dim,
            "m0_norm": 1,
            "m_sig": layout.n_commodities,
            "next_q": layout.backlog_dim,
            "next_arrivals": layout.n_commodities,
        }
        self._data = {
            name: np.zeros((self.capacity, width), dtype=np.float32)
            for name, width in shapes.items()
        }
        self._head = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, draft: TransitionDraft, m0_norm: float, m_sig: np.ndarray,
             next_q: np.ndarray, next_arrivals: np.ndarray) -> None:
        row = self._head
        d = self._data
        d["state_q"][row] = draft.state_q
        d["arrivals"][row] = draft.arrivals
        d["route_probs"][row] = draft.route_probs
        d["sched_obs"][row] = draft.sched_obs
        d["sched_probs"][row] = draft.sched_probs
        d["m0_norm"][row, 0] = m0_norm
        d["m_sig"][row] = m_sig
        d["next_q"][row] = next_q
        d["next_arrivals"][row] = next_arrivals
        self._head = (self._head + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self._size, size=batch)

    def sample(self, batch: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        if self._size < batch:
            raise ValueError(f"buffer holds {self._size} transitions, need {batch}")
        idx = self.sample_indices(batch, rng)
        return {name: arr[idx].astype(np.float64) for name, arr in self._data.items()}


class ControlStack:
    """Actors, critic, targets, optimizers, and the replay buffer."""

    def __init__(
        self,
        env: LifetimeEnv,
        hidden: tuple[int, int] = (64, 64),
        learning_rate: float = 1e-3,
        buffer_capacity: int = 100_000,
        tau: float = 0.01,
        obs_scale: float = 0.1,
        init_rng: np.random.Generator | None = None,
    ):
        self.env = env
        self.layout = AgentLayout.from_env(env)
        self.tau = tau
        self.obs_scale = obs_scale
        rng = init_rng if init_rng is not None else np.random.default_rng()
        lay = self.layout

        self.routing = init_mlp(
            [lay.state_dim, *hidden, lay.route_dim], "softmax", tuple(lay.route_groups), rng
        )
        self.sched = {}
        for node in lay.sched_nodes:
            n_paths = len(lay.sched_paths[node])
            self.sched[node] = init_mlp(
                [n_paths, *hidden, 3 * n_paths], "softmax", (3,) * n_paths, rng
            )
        self.critic = init_mlp([lay.critic_dim, *hidden, 1], "linear", (), rng)

        self.routing_target = self.routing.copy()
        self.sched_target = {i: net.copy() for i, net in self.sched.items()}
        self.critic_target = self.critic.copy()

        self.opt_routing = AdamState.for_net(self.routing, learning_rate)
        self.opt_sched = {i: AdamState.for_net(n, learning_rate) for i, n in self.sched.items()}
        self.opt_critic = AdamState.for_net(self.critic, learning_rate)

        self.buffer = ReplayBuffer(buffer_capacity, lay)

    # -- acting --------------------------------------------------------------

    def _state_vec(self, q_flat: np.ndarray, arrivals: np.ndarray) -> np.ndarray:
        return np.concatenate([q_flat, arrivals]).astype(np.float64) * self.obs_scale

    def act(
        self,
        state: QueueState,
        arrivals: np.ndarray,
        eps: float,
        explore_rng: np.random.Generator | None = None,
    ) -> tuple[NetAction, TransitionDraft]:
        """Compose routing, scheduling, and block allocation into one feasible action."""
        env, lay = self.env, self.layout
        q_flat = lay.flatten_backlog(state.q).astype(np.float64)
        route_probs, _ = self.routing.forward(self._state_vec(q_flat, arrivals))
        if eps > 0 and explore_rng is not None and explore_rng.random() < eps:
            route_probs = self._random_groups(lay.route_groups, explore_rng)

        counts = route_counts(route_probs, lay.route_groups, arrivals)
        staged = env.inject(state, arrivals, counts)
        agg = staged.q[:, :, 1:].sum(axis=2)

        sched_obs_parts = []
        sched_prob_parts = []
        send_entries: list[list] = []  # [link_e, lifetime, unit, count]
        drops: dict[tuple[int, int, int], int] = {}
        for node in lay.sched_nodes:
            paths_here = lay.sched_paths[node]
            obs = agg[node, paths_here].astype(np.float64)
            probs, _ = self.sched[node].forward(obs * self.obs_scale)
            if eps > 0 and explore_rng is not None and explore_rng.random() < eps:
                probs = self._random_groups([3] * len(paths_here), explore_rng)
            sched_obs_parts.append(obs)
            sched_prob_parts.append(probs)
            for slot, k in enumerate(paths_here):
                backlog = int(agg[node, k])
                if backlog == 0:
                    continue
                send, drop = schedule_counts(probs[3 * slot : 3 * slot + 3], backlog)
                per_ell_drop, per_ell_send = resolve_lowest_lifetime(
                    staged.q[node, k], drop, send
                )
                for ell, n in per_ell_drop.items():
                    drops[(node, k, ell)] = n
                j = env._next_hop[(node, k)]
                e = env.link_index[(env.graph.nodes[node], env.graph.nodes[j])]
                for ell, n in per_ell_send.items():
                    send_entries.append([e, ell, k, n])

        flows, blocks = self._fit_to_capacity(send_entries)
        action = NetAction(blocks=blocks, flows=flows, drops=drops, route=counts)
        draft = TransitionDraft(
            state_q=q_flat.astype(np.float32),
            arrivals=np.asarray(arrivals, dtype=np.float32),
            route_probs=route_probs.astype(np.float32),
            sched_obs=np.concatenate(sched_obs_parts).astype(np.float32)
            if sched_obs_parts
            else np.zeros(0, dtype=np.float32),
            sched_probs=np.concatenate(sched_prob_parts).astype(np.float32)
            if sched_prob_parts
            else np.zeros(0, dtype=np.float32),
        )
        return action, draft

    def _random_groups(self, groups: list[int], rng: np.random.Generator) -> np.ndarray:
        return np.concatenate([rng.dirichlet(np.ones(g)) for g in groups])

    def _fit_to_capacity(self, send_entries: list[list]) -> tuple[dict, np.ndarray]:
        """Trim per-link overload, shedding the longest-lived packets first
        (they can best afford to wait), then allocate blocks on demand."""
        env = self.env
        blocks = np.zeros(len(env.links), dtype=np.int64)
        flows: dict[tuple[int, int, int, int], int] = {}
        by_link: dict[int, list[list]] = {}
        for entry in send_entries:
            by_link.setdefault(entry[0], []).append(entry)
        for e, entries in by_link.items():
            i_name, j_name = env.links[e]
            params = env.graph.links[(i_name, j_name)]
            overload = sum(n for (_, _, _, n) in entries) - params.capacity
            if overload > 0:
                entries.sort(key=lambda t: (t[1], t[2]), reverse=True)
                for entry in entries:
                    if overload <= 0:
                        break
                    cut = min(entry[3], overload)
                    entry[3] -= cut
                    overload -= cut
            total = 0
            i = env.node_index[i_name]
            j = env.node_index[j_name]
            for (_, ell, k, n) in entries:
                if n > 0:
                    flows[(i, j, k, ell)] = flows.get((i, j, k, ell), 0) + n
                    total += n
            blocks[e] = allocate_blocks(total, params.block_capacity, params.max_blocks)
        return flows, blocks

    # -- learning --------------------------------------------------------------

    def _critic_inputs(self, batch: dict[str, np.ndarray]) -> np.ndarray:
        state = np.concatenate([batch["state_q"], batch["arrivals"]], axis=1) * self.obs_scale
        return np.concatenate([state, batch["route_probs"], batch["sched_probs"]], axis=1)

    def _target_actions(self, next_q: np.ndarray, next_b: np.ndarray) -> np.ndarray:
        """Joint action of the target actors at the sampled next states."""
        lay = self.layout
        B = next_q.shape[0]
        s = np.concatenate([next_q, next_b], axis=1) * self.obs_scale
        route, _ = self.routing_target.forward(s)
        counts = batched_route_counts(route, lay.route_groups, next_b)
        q4 = next_q.reshape(B, lay.n_nodes, lay.n_units, lay.lifetime_cap)
        agg = q4.sum(axis=3)
        agg[:, self.env.unit_source, np.arange(lay.n_units)] += counts
        parts = [route]
        for node in lay.sched_nodes:
            obs = agg[:, node, lay.sched_paths[node]] * self.obs_scale
            probs, _ = self.sched_target[node].forward(obs)
            parts.append(probs)
        return np.concatenate(parts, axis=1)

    def update(
        self,
        batch_size: int,
        gamma: float,
        lam: np.ndarray,
        sample_rng: np.random.Generator,
    ) -> dict[str, float]:
        """One critic regression step plus one ascent step per actor.

        Rewards are re-priced with the current multipliers so old transitions
        stay consistent with the Lagrangian being minimized now.
        """
        batch = self.buffer.sample(batch_size, sample_rng)
        lay = self.layout
        B = batch_size

        rewards = -batch["m0_norm"][:, 0] + batch["m_sig"] @ np.asarray(lam, dtype=np.float64)
        target_act = self._target_actions(batch["next_q"], batch["next_arrivals"])
        s_next = np.concatenate([batch["next_q"], batch["next_arrivals"]], axis=1) * self.obs_scale
        q_next, _ = self.critic_target.forward(np.concatenate([s_next, target_act], axis=1))
        y = rewards + gamma * q_next[:, 0]

        x = self._critic_inputs(batch)
        q, cache = self.critic.forward(x)
        err = q[:, 0] - y
        critic_loss = float(np.mean(err**2))
        grads, _ = self.critic.backward(cache, (2.0 / B) * err[:, None])
        adam_step(self.critic, self.opt_critic, grads)

        # actors: each re-chooses its own slots while the others stay as replayed
        state_scaled = np.concatenate([batch["state_q"], batch["arrivals"]], axis=1) * self.obs_scale
        a_route, cache_r = self.routing.forward(state_scaled)
        x_pi = x.copy()
        x_pi[:, lay.route_slots()] = a_route
        dq = self._critic_input_grad(x_pi)
        g_routing, _ = self.routing.backward(cache_r, -dq[:, lay.route_slots()])
        adam_step(self.routing, self.opt_routing, g_routing)

        obs_start = 0
        for node in lay.sched_nodes:
            width = len(lay.sched_paths[node])
            obs = batch["sched_obs"][:, obs_start : obs_start + width] * self.obs_scale
            obs_start += width
            a_i, cache_i = self.sched[node].forward(obs)
            x_pi = x.copy()
            x_pi[:, lay.sched_slots(node)] = a_i
            dq = self._critic_input_grad(x_pi)
            g_i, _ = self.sched[node].backward(cache_i, -dq[:, lay.sched_slots(node)])
            adam_step(self.sched[node], self.opt_sched[node], g_i)

        soft_update(self.routing_target, self.routing, self.tau)
        for node in lay.sched_nodes:
            soft_update(self.sched_target[node], self.sched[node], self.tau)
        soft_update(self.critic_target, self.critic, self.tau)

        return {"critic_loss": critic_loss, "mean_q": float(q.mean()), "mean_target": float(y.mean())}

    def _critic_input_grad(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the batch-mean critic value with respect to its inputs."""
        B = x.shape[0]
        _, cache = self.critic.forward(x)
        _, dx = self.critic.backward(cache, np.full((B, 1), 1.0 / B))
        return dx

    # -- persistence -------------------------------------------------------------

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        lay = self.layout
        manifest = {
            "format": 1,
            "obs_scale": self.obs_scale,
            "state_dim": lay.state_dim,
            "route_groups": lay.route_groups,
            "sched_nodes": [self.env.graph.nodes[i] for i in lay.sched_nodes],
            "sched_paths": {
                self.env.graph.nodes[i]: ks for i, ks in lay.sched_paths.items()
            },
            "files": {"routing": "routing.mlp", "critic": "critic.mlp"},
        }
        save_mlp(os.path.join(directory, "routing.mlp"), self.routing)
        save_mlp(os.path.join(directory, "critic.mlp"), self.critic)
        for node in lay.sched_nodes:
            name = self.env.graph.nodes[node]
            fname = f"sched_{name}.mlp"
            manifest["files"][f"sched:{name}"] = fname
            save_mlp(os.path.join(directory, fname), self.sched[node])
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)

    def load(self, directory) -> None:
        """Replace all live and target parameters with a saved snapshot."""
        path = os.path.join(directory, "manifest.json")
        try:
            with open(path) as fh:
                manifest = json.load(fh)
        except FileNotFoundError:
            raise ValueError(f"{directory}: no checkpoint manifest") from None
        lay = self.layout
        if manifest.get("state_dim") != lay.state_dim or manifest.get("route_groups") != list(
            lay.route_groups
        ):
            raise ValueError(
                f"{directory}: checkpoint layout does not match this configuration"
            )
        want_nodes = [self.env.graph.nodes[i] for i in lay.sched_nodes]
        if manifest.get("sched_nodes") != want_nodes:
            raise ValueError(f"{directory}: checkpoint scheduling agents do not match")

        def load_into(net: Mlp, fname: str) -> Mlp:
            loaded = load_mlp(os.path.join(directory, fname))
            if loaded.dims != net.dims or loaded.groups != net.groups:
                raise ValueError(f"{fname}: network shape does not match configuration")
            return loaded

        self.routing = load_into(self.routing, manifest["files"]["routing"])
        self.critic = load_into(self.critic, manifest["files"]["critic"])
        for node in lay.sched_nodes:
            name = self.env.graph.nodes[node]
            self.sched[node] = load_into(self.sched[node], manifest["files"][f"sched:{name}"])
        self.routing_target = self.routing.copy()
        self.critic_target = self.critic.copy()
        self.sched_target = {i: n.copy() for i, n in self.sched.items()}
