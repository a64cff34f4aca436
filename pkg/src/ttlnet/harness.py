"""Experiment orchestration: seeding, the train/improve/test phase machine,
metrics emission, checkpoint management, and arrival-rate sweeps.

Everything a run writes is a pure function of (config, seed): arrival,
initialization, exploration, and replay draws come from separate named
streams derived from the master seed, CSV floats are printed with shortest
round-trip repr, and wall-clock time goes only into the manifest.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .agents import ControlStack, ExplorationSchedule
from .baselines import BackpressurePolicy, MaxWeightPolicy
from .config import ConfigError, ExperimentConfig, config_summary
from .duals import (
    checkpoint_ok,
    discounted_sum,
    dual_update,
    estimate_mhat,
    init_lambda,
    record_reward,
    reward,
)
from .env import LifetimeEnv
from .model import build_path_table, validate_graph

_STREAMS = {"arrivals": 0, "init": 1, "exploration": 2, "replay": 3}


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose, derived from the master seed."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(_STREAMS[name],))
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


METRICS_FIXED = ["phase", "episode", "iteration", "epsilon", "cost", "cost_norm", "reward"]
METRICS_PER_COMMODITY = [
    "arrivals",
    "delivered",
    "reliability",
    "throughput",
    "target_throughput",
    "lambda",
    "mhat",
]
SUMMARY_FIXED = ["policy", "rate", "seed", "episodes", "cost_per_episode"]
SUMMARY_PER_COMMODITY = ["reliability", "target", "rate", "throughput"]


def metrics_header(n_commodities: int) -> list[str]:
    cols = list(METRICS_FIXED)
    for c in range(1, n_commodities + 1):
        cols.extend(f"{name}_c{c}" for name in METRICS_PER_COMMODITY)
    return cols


def summary_header(n_commodities: int) -> list[str]:
    cols = list(SUMMARY_FIXED)
    for c in range(1, n_commodities + 1):
        cols.extend(f"{name}_c{c}" for name in SUMMARY_PER_COMMODITY)
    return cols


class CsvWriter:
    def __init__(self, path: Path, header: list[str]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="\n")
        self._width = len(header)
        self._fh.write(",".join(header) + "\n")

    def row(self, values: list) -> None:
        if len(values) != self._width:
            raise ValueError(f"row width {len(values)} != header width {self._width}")
        self._fh.write(",".join(_fmt(v) for v in values) + "\n")

    def close(self) -> None:
        self._fh.close()


@dataclass
class EpisodeRecord:
    """Raw tallies of one episode before CSV formatting."""

    phase: str
    episode: int
    iteration: int | None
    epsilon: float | None
    cost: float
    cost_norm: float
    reward_sum: float
    arrivals: np.ndarray
    delivered: np.ndarray
    signals: np.ndarray  # (T, C) per-slot constraint signals
    mhat: np.ndarray | None = None

    def reliability(self) -> np.ndarray:
        out = np.ones(len(self.arrivals))
        nonzero = self.arrivals > 0
        out[nonzero] = self.delivered[nonzero] / self.arrivals[nonzero]
        return out


def _record_row(rec: EpisodeRecord, env: LifetimeEnv, lam: np.ndarray | None, length: int) -> list:
    row = [
        rec.phase,
        rec.episode,
        rec.iteration,
        rec.epsilon,
        rec.cost,
        rec.cost_norm,
        rec.reward_sum,
    ]
    rel = rec.reliability()
    if (rel > 1.5).any():
        # episodes start empty, so deliveries cannot outrun arrivals by this
        # much; almost certainly an accounting bug upstream
        print(
            f"warning: episode {rec.episode} reliability {rel} exceeds 1.5",
            file=sys.stderr,
        )
    for c, com in enumerate(env.commodities):
        row.extend(
            [
                int(rec.arrivals[c]),
                int(rec.delivered[c]),
                float(rel[c]),
                float(rec.delivered[c]) / length,
                com.reliability_target * com.arrival_rate,
                None if lam is None else float(lam[c]),
                None if rec.mhat is None else float(rec.mhat[c]),
            ]
        )
    return row


def build_problem(cfg: ExperimentConfig, keyed_by_paths: bool):
    """Graph, commodities, and an environment seeded from the config."""
    graph = cfg.graph()
    errors = validate_graph(graph)
    if errors:
        raise ConfigError("; ".join(errors))
    commodities = list(cfg.commodities)
    paths = build_path_table(graph, commodities)
    for c, com in enumerate(commodities):
        if not any(p.commodity == c for p in paths):
            raise ConfigError(
                f"commodity {c} ({com.source} -> {com.destination}) has no feasible path"
            )
    env = LifetimeEnv(
        graph,
        commodities,
        paths if keyed_by_paths else None,
        rng=rng_stream(cfg.seed, "arrivals"),
    )
    return graph, commodities, paths, env


def _run_episode(env, act_fn, collect_fn, length, lam, gamma):
    """Run one episode; returns tallies and per-slot constraint signals."""
    state = env.reset()
    arrivals = env.sample_arrivals()
    n_c = env.n_commodities
    signals = np.zeros((length, n_c))
    rewards = np.zeros(length)
    m0_norms = np.zeros(length)
    cost = 0.0
    total_arrivals = np.zeros(n_c, dtype=np.int64)
    total_delivered = np.zeros(n_c, dtype=np.int64)
    for t in range(length):
        action, payload = act_fn(state, arrivals)
        outcome = env.step(state, action, arrivals)
        next_arrivals = env.sample_arrivals()
        m = np.array([env.throughput_signal(outcome, c) for c in range(n_c)])
        signals[t] = m
        m0_norms[t] = outcome.cost_norm
        rewards[t] = reward(outcome.cost_norm, m, lam)
        cost += outcome.cost
        total_arrivals += arrivals
        total_delivered += outcome.delivered
        if collect_fn is not None:
            collect_fn(payload, outcome, m, next_arrivals)
        state = outcome.state
        arrivals = next_arrivals
    return {
        "signals": signals,
        "reward_sum": float(discounted_sum(rewards, gamma)),
        "cost": cost,
        "cost_norm": float(m0_norms.sum()),
        "arrivals": total_arrivals,
        "delivered": total_delivered,
    }


def _write_manifest(out_dir: Path, cfg: ExperimentConfig, extra: dict) -> None:
    summary = config_summary(cfg)
    blob = json.dumps(summary, sort_keys=True).encode()
    manifest = {
        "config": summary,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "versions": {
            "ttlnet": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
    }
    manifest.update(extra)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _summary_row(policy, cfg, episodes, mean_cost, mean_rel, mean_thr) -> list:
    row = [policy, cfg.commodities[0].arrival_rate, cfg.seed, episodes, mean_cost]
    for c, com in enumerate(cfg.commodities):
        row.extend(
            [float(mean_rel[c]), com.reliability_target, com.arrival_rate, float(mean_thr[c])]
        )
    return row


def _test_phase(env, cfg, act_fn, writer, lam, episode_start, show_lam=True):
    """Greedy evaluation episodes; returns the summary statistics.

    `lam` prices the logged rewards; rows show it only when the run actually
    maintained multipliers (show_lam), so baseline rows leave it empty.
    """
    n_ep = cfg.episodes.test
    length = cfg.episodes.length
    n_c = env.n_commodities
    rels = np.zeros((max(n_ep, 1), n_c))
    costs = np.zeros(max(n_ep, 1))
    thr = np.zeros((max(n_ep, 1), n_c))
    rewards = np.zeros(max(n_ep, 1))
    for e in range(n_ep):
        stats = _run_episode(env, act_fn, None, length, lam, cfg.learning.gamma)
        rec = EpisodeRecord(
            phase="test",
            episode=episode_start + e,
            iteration=None,
            epsilon=0.0,
            cost=stats["cost"],
            cost_norm=stats["cost_norm"],
            reward_sum=stats["reward_sum"],
            arrivals=stats["arrivals"],
            delivered=stats["delivered"],
            signals=stats["signals"],
        )
        writer.row(_record_row(rec, env, lam if show_lam else None, length))
        rels[e] = rec.reliability()
        costs[e] = stats["cost"]
        thr[e] = stats["delivered"] / length
        rewards[e] = stats["reward_sum"]
    n = max(n_ep, 1)
    return {
        "episodes": n_ep,
        "mean_cost": float(costs[:n].mean()) if n_ep else 0.0,
        "mean_reliability": rels[:n_ep].mean(axis=0) if n_ep else np.ones(n_c),
        "mean_throughput": thr[:n_ep].mean(axis=0) if n_ep else np.zeros(n_c),
        "mean_reward": float(rewards[:n_ep].mean()) if n_ep else 0.0,
    }


def run_training(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> dict:
    """Full protocol: train and improve phases, then greedy testing of the
    best saved model. Returns the test-phase summary."""
    t_start = time.monotonic()
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    graph, commodities, paths, env = build_problem(cfg, keyed_by_paths=True)
    lc = cfg.learning
    stack = ControlStack(
        env,
        hidden=tuple(lc.hidden),
        learning_rate=lc.learning_rate,
        buffer_capacity=lc.buffer_capacity,
        tau=lc.target_update,
        obs_scale=lc.obs_scale,
        init_rng=rng_stream(cfg.seed, "init"),
    )
    duals = init_lambda(
        commodities,
        eta=cfg.dual.learning_rate,
        window=cfg.dual.window,
        sigma_threshold=cfg.dual.sigma_threshold,
        lam0=cfg.dual.lambda_init,
    )
    explore_rng = rng_stream(cfg.seed, "exploration")
    replay_rng = rng_stream(cfg.seed, "replay")
    schedule = ExplorationSchedule(cfg.exploration.decay, cfg.exploration.floor)
    writer = CsvWriter(out / "metrics.csv", metrics_header(env.n_commodities))

    length = cfg.episodes.length
    V = cfg.episodes.per_iteration
    episode_idx = 0
    global_iter = 0
    best_tag = None
    saved_tags = []
    fallback_scores: dict[str, float] = {}

    def collect(draft, outcome, m, next_arrivals):
        stack.buffer.push(
            draft,
            outcome.cost_norm,
            m,
            stack.layout.flatten_backlog(outcome.state.q),
            next_arrivals,
        )

    for phase in ("train", "improve"):
        n_iters = getattr(cfg.episodes, phase) // V
        for local_iter in range(n_iters):
            eps = schedule.epsilon(local_iter)

            def act(state, arrivals):
                return stack.act(state, arrivals, eps, explore_rng)

            episode_signals = []
            returns = []
            records = []
            for v in range(V):
                stats = _run_episode(env, act, collect, length, duals.lam, lc.gamma)
                records.append(
                    EpisodeRecord(
                        phase=phase,
                        episode=episode_idx,
                        iteration=global_iter,
                        epsilon=eps,
                        cost=stats["cost"],
                        cost_norm=stats["cost_norm"],
                        reward_sum=stats["reward_sum"],
                        arrivals=stats["arrivals"],
                        delivered=stats["delivered"],
                        signals=stats["signals"],
                    )
                )
                episode_signals.append(stats["signals"])
                returns.append(stats["reward_sum"])
                episode_idx += 1

            lam_in_effect = duals.lam.copy()
            if len(stack.buffer) >= lc.batch_size:
                for _ in range(lc.gradient_steps):
                    stack.update(lc.batch_size, lc.gamma, duals.lam, replay_rng)
            mhat = estimate_mhat(episode_signals, lc.gamma)
            record_reward(duals, float(np.mean(returns)))
            dual_update(duals, mhat)
            global_iter += 1

            records[-1].mhat = mhat
            for rec in records:
                writer.row(_record_row(rec, env, lam_in_effect, length))

            if global_iter % cfg.dual.window == 0 and checkpoint_ok(duals, mhat):
                tag = f"iter_{global_iter:06d}"
                stack.save(out / "checkpoints" / tag)
                saved_tags.append(tag)
                best_tag = tag
        if phase == "train":
            stack.save(out / "checkpoints" / "train_end")
            if duals.reward_window:
                fallback_scores["train_end"] = float(np.mean(duals.reward_window))

    stack.save(out / "checkpoints" / "final")
    if duals.reward_window:
        fallback_scores["final"] = float(np.mean(duals.reward_window))
    if best_tag is None:
        # no snapshot met the save criteria; take the phase-end snapshot with
        # the best trailing reward window, the same currency the criteria use
        best_tag = max(fallback_scores, key=fallback_scores.get, default="final")
    (out / "checkpoints" / "BEST").write_text(best_tag + "\n")

    # test phase: reload the best snapshot and act greedily, no updates
    stack.load(out / "checkpoints" / best_tag)

    def act_greedy(state, arrivals):
        return stack.act(state, arrivals, 0.0)

    summary = _test_phase(env, cfg, act_greedy, writer, duals.lam, episode_idx)
    writer.close()

    sw = CsvWriter(out / "summary.csv", summary_header(env.n_commodities))
    sw.row(
        _summary_row(
            "cdrl",
            cfg,
            summary["episodes"],
            summary["mean_cost"],
            summary["mean_reliability"],
            summary["mean_throughput"],
        )
    )
    sw.close()

    _write_manifest(
        out,
        cfg,
        {
            "best_checkpoint": best_tag,
            "saved_checkpoints": saved_tags,
            "fallback_window_rewards": fallback_scores,
            "iterations": global_iter,
            "final_lambda": duals.lam.tolist(),
            "best_window_reward": duals.best_window_reward,
            "wall_clock_seconds": time.monotonic() - t_start,
        },
    )
    summary["best_checkpoint"] = best_tag
    summary["final_lambda"] = duals.lam.tolist()
    summary["out"] = str(out)
    return summary


def run_eval(cfg: ExperimentConfig, checkpoint: str | Path, out_dir: str | Path | None = None) -> dict:
    """Greedy test episodes of a saved model, no exploration, no updates."""
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    graph, commodities, paths, env = build_problem(cfg, keyed_by_paths=True)
    lc = cfg.learning
    stack = ControlStack(
        env,
        hidden=tuple(lc.hidden),
        learning_rate=lc.learning_rate,
        buffer_capacity=1,
        tau=lc.target_update,
        obs_scale=lc.obs_scale,
        init_rng=rng_stream(cfg.seed, "init"),
    )
    stack.load(checkpoint)

    def act(state, arrivals):
        return stack.act(state, arrivals, 0.0)

    writer = CsvWriter(out / "metrics.csv", metrics_header(env.n_commodities))
    lam = np.zeros(env.n_commodities)
    summary = _test_phase(env, cfg, act, writer, lam, 0, show_lam=False)
    writer.close()
    sw = CsvWriter(out / "summary.csv", summary_header(env.n_commodities))
    sw.row(
        _summary_row(
            "cdrl",
            cfg,
            summary["episodes"],
            summary["mean_cost"],
            summary["mean_reliability"],
            summary["mean_throughput"],
        )
    )
    sw.close()
    _write_manifest(out, cfg, {"checkpoint": str(checkpoint)})
    summary["out"] = str(out)
    return summary


def run_baseline(cfg: ExperimentConfig, policy: str, out_dir: str | Path | None = None) -> dict:
    """Test-phase episodes under a non-learning policy."""
    if policy not in ("bp", "umw"):
        raise ConfigError(f"baseline policy must be bp or umw, got {policy!r}")
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    graph, commodities, paths, env = build_problem(cfg, keyed_by_paths=policy == "umw")
    impl = BackpressurePolicy(env) if policy == "bp" else MaxWeightPolicy(env)

    def act(state, arrivals):
        return impl.step(state, arrivals), None

    writer = CsvWriter(out / "metrics.csv", metrics_header(env.n_commodities))
    lam = np.zeros(env.n_commodities)
    summary = _test_phase(env, cfg, act, writer, lam, 0, show_lam=False)
    writer.close()
    sw = CsvWriter(out / "summary.csv", summary_header(env.n_commodities))
    sw.row(
        _summary_row(
            policy,
            cfg,
            summary["episodes"],
            summary["mean_cost"],
            summary["mean_reliability"],
            summary["mean_throughput"],
        )
    )
    sw.close()
    _write_manifest(out, cfg, {"policy": policy})
    summary["out"] = str(out)
    return summary


def run_sweep(
    cfg: ExperimentConfig,
    rates: list[float],
    policies: list[str],
    out_dir: str | Path | None = None,
) -> list[dict]:
    """Cross product of arrival rates and policies; one summary row each.

    Every point runs in its own subdirectory with the same master seed, so
    arrival streams are common across policies at a given rate.
    """
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    results = []
    for policy in policies:
        if policy not in ("cdrl", "bp", "umw"):
            raise ConfigError(f"unknown sweep policy {policy!r}")
        for rate in rates:
            point = copy.deepcopy(cfg)
            point.commodities = [
                replace(com, arrival_rate=float(rate)) for com in point.commodities
            ]
            sub = out / "sweep" / f"{policy}_rate{_fmt(float(rate))}"
            if policy == "cdrl":
                summary = run_training(point, sub)
            else:
                summary = run_baseline(point, policy, sub)
            rows.append(
                _summary_row(
                    policy,
                    point,
                    summary["episodes"],
                    summary["mean_cost"],
                    summary["mean_reliability"],
                    summary["mean_throughput"],
                )
            )
            results.append(
                {"policy": policy, "rate": float(rate), **summary}
            )
    sw = CsvWriter(out / "summary.csv", summary_header(len(cfg.commodities)))
    for row in rows:
        sw.row(row)
    sw.close()
    _write_manifest(out, cfg, {"sweep": {"rates": list(map(float, rates)), "policies": policies}})
    return results
