"""Multiplier state and the outer loop's scalar bookkeeping.

Each commodity carries a non-negative price on its delivery-shortfall
constraint. Prices fall while the policy over-delivers and rise while it
under-delivers; a model snapshot is taken when deliveries are feasible, the
prices have been stable for a full window, and windowed reward beats every
earlier window.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .model import Commodity


@dataclass
class DualState:
    """Constraint prices plus the sliding-window statistics of the outer loop."""

    lam: np.ndarray
    eta: np.ndarray
    iteration: int = 0
    window: int = 100
    sigma_threshold: float = 0.05
    lam_history: deque = field(default_factory=deque)
    reward_window: deque = field(default_factory=deque)
    best_window_reward: float = float("-inf")

    def __post_init__(self):
        if not isinstance(self.lam_history, deque) or self.lam_history.maxlen != self.window:
            self.lam_history = deque(self.lam_history, maxlen=self.window)
        if not isinstance(self.reward_window, deque) or self.reward_window.maxlen != self.window:
            self.reward_window = deque(self.reward_window, maxlen=self.window)


def init_lambda(
    commodities: list[Commodity],
    eta: float | list[float] = 0.005,
    window: int = 100,
    sigma_threshold: float = 0.05,
    lam0: list[float] | None = None,
) -> DualState:
    """Starting prices scale with how much timely traffic each commodity needs.

    lam0 = 1.25 * sqrt(rate * target) unless overridden, so tighter services
    weigh delivery more heavily at the start.
    """
    if lam0 is None:
        lam = np.array(
            [1.25 * np.sqrt(c.arrival_rate * c.reliability_target) for c in commodities]
        )
    else:
        lam = np.asarray(lam0, dtype=float).copy()
    if (lam < 0).any():
        raise ValueError("initial multipliers must be non-negative")
    eta_vec = np.full(len(commodities), float(eta)) if np.isscalar(eta) else np.asarray(eta, float)
    return DualState(lam=lam, eta=eta_vec, window=window, sigma_threshold=sigma_threshold)


def reward(m0_norm: float, m: np.ndarray, lam: np.ndarray) -> float:
    """Per-slot reward: negative normalized cost plus priced delivery slack."""
    return float(-m0_norm + np.dot(lam, m))


def discounted_sum(values: np.ndarray, gamma: float) -> np.ndarray:
    """Sum of gamma^t * values[t] along axis 0."""
    values = np.asarray(values, dtype=float)
    weights = gamma ** np.arange(values.shape[0])
    return np.tensordot(weights, values, axes=(0, 0))


def estimate_mhat(episode_signals: list[np.ndarray], gamma: float) -> np.ndarray:
    """Monte-Carlo estimate of each constraint's discounted slack.

    episode_signals holds one (T, n_commodities) array of per-slot signals per
    collection episode; the estimate averages the discounted sums.
    """
    if not episode_signals:
        raise ValueError("need at least one episode")
    return np.mean([discounted_sum(ep, gamma) for ep in episode_signals], axis=0)


def dual_update(state: DualState, mhat: np.ndarray) -> DualState:
    """Subgradient step on the prices, projected onto the non-negative orthant."""
    state.lam = np.maximum(state.lam - state.eta * np.asarray(mhat, dtype=float), 0.0)
    state.iteration += 1
    state.lam_history.append(state.lam.copy())
    return state


def record_reward(state: DualState, mean_episode_return: float) -> None:
    state.reward_window.append(float(mean_episode_return))


def lam_history_std(state: DualState) -> np.ndarray:
    """Per-commodity standard deviation of the prices over the stored window."""
    return np.array(state.lam_history).std(axis=0)


def checkpoint_ok(state: DualState, mhat: np.ndarray) -> bool:
    """Snapshot test: feasible, stable prices, and record windowed reward.

    On success the reward high-water mark moves up, so successive snapshots
    are strictly improving.
    """
    if len(state.lam_history) < state.window or len(state.reward_window) < state.window:
        return False
    if (np.asarray(mhat) < 0).any():
        return False
    if (lam_history_std(state) >= state.sigma_threshold).any():
        return False
    window_mean = float(np.mean(state.reward_window))
    if window_mean <= state.best_window_reward:
        return False
    state.best_window_reward = window_mean
    return True
