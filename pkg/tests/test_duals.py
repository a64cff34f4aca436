import numpy as np
import pytest

from ttlnet.duals import (
    DualState,
    checkpoint_ok,
    discounted_sum,
    dual_update,
    estimate_mhat,
    init_lambda,
    lam_history_std,
    record_reward,
    reward,
)
from ttlnet.model import Commodity

from conftest import make_edge_commodities


def filled_state(lam=(1.0, 1.0), window=5, sigma=0.05, reward_value=1.0):
    st = DualState(
        lam=np.array(lam, dtype=float),
        eta=np.full(len(lam), 0.005),
        window=window,
        sigma_threshold=sigma,
    )
    for _ in range(window):
        st.lam_history.append(np.array(lam, dtype=float))
        record_reward(st, reward_value)
    return st


def test_initial_multipliers_follow_rate_and_target():
    st = init_lambda(make_edge_commodities())
    assert st.lam[0] == pytest.approx(1.25 * np.sqrt(6.0 * 0.7))
    assert st.lam[0] == pytest.approx(2.5617, abs=1e-4)
    st2 = init_lambda([Commodity("a", "b", 4, 0.6, 6.0)])
    assert st2.lam[0] == pytest.approx(2.3717, abs=1e-4)
    st3 = init_lambda([Commodity("a", "b", 4, 0.0, 6.0)])
    assert st3.lam[0] == 0.0
    assert (st.eta == 0.005).all()


def test_initial_multiplier_override():
    st = init_lambda(make_edge_commodities(), lam0=[0.5, 0.25])
    assert st.lam.tolist() == [0.5, 0.25]
    with pytest.raises(ValueError):
        init_lambda(make_edge_commodities(), lam0=[-1.0, 0.0])


def test_reward_arithmetic():
    assert reward(0.3, np.array([0.1, -0.05]), np.array([2.0, 1.0])) == pytest.approx(-0.15)
    assert reward(0.4, np.array([0.1, -0.05]), np.zeros(2)) == pytest.approx(-0.4)
    assert reward(0.0, np.zeros(2), np.array([5.0, 5.0])) == 0.0


def test_estimate_mhat_geometric_sum():
    ep = np.ones((3, 1))
    assert estimate_mhat([ep], gamma=0.5)[0] == pytest.approx(1.75)


def test_estimate_mhat_boundary_and_degenerate_discount():
    flat = np.zeros((10, 2))
    assert estimate_mhat([flat, flat], gamma=0.97).tolist() == [0.0, 0.0]
    eps = [np.arange(8, dtype=float).reshape(4, 2), np.ones((4, 2))]
    got = estimate_mhat(eps, gamma=0.0)
    assert got.tolist() == [0.5, 1.0]  # mean of the first rows only
    with pytest.raises(ValueError):
        estimate_mhat([], gamma=0.97)


def test_dual_update_examples():
    st = DualState(lam=np.array([2.0]), eta=np.array([0.005]))
    dual_update(st, np.array([0.5]))
    assert st.lam[0] == pytest.approx(1.9975)
    st = DualState(lam=np.array([0.001]), eta=np.array([0.005]))
    dual_update(st, np.array([1.0]))
    assert st.lam[0] == 0.0
    st = DualState(lam=np.array([2.0]), eta=np.array([0.005]))
    dual_update(st, np.array([-0.5]))
    assert st.lam[0] == pytest.approx(2.0025)


def test_lambda_hits_zero_in_exactly_513_updates():
    st = init_lambda([Commodity("a", "b", 6, 0.7, 6.0)])
    assert st.lam[0] == pytest.approx(2.5617, abs=1e-4)
    steps_to_zero = None
    for step in range(1, 600):
        dual_update(st, np.array([1.0]))
        assert st.lam[0] >= 0.0
        if st.lam[0] == 0.0:
            steps_to_zero = step
            break
    assert steps_to_zero == 513
    dual_update(st, np.array([1.0]))
    assert st.lam[0] == 0.0  # stays pinned


def test_trajectory_identity_reward_equals_priced_components():
    rng = np.random.default_rng(3)
    for _ in range(100):
        T = int(rng.integers(1, 60))
        n = int(rng.integers(1, 4))
        lam = rng.uniform(0, 5, size=n)
        gamma = float(rng.uniform(0.5, 1.0))
        m0 = rng.uniform(0, 1, size=T)
        m = rng.normal(size=(T, n))
        rewards = np.array([reward(m0[t], m[t], lam) for t in range(T)])
        lhs = discounted_sum(rewards, gamma)
        rhs = -discounted_sum(m0, gamma) + float(np.dot(lam, discounted_sum(m, gamma)))
        assert abs(lhs - rhs) <= 1e-9


def test_checkpoint_all_clauses_true():
    st = filled_state(reward_value=10.0)
    st.best_window_reward = 9.0
    assert checkpoint_ok(st, np.array([0.1, 0.2]))
    assert st.best_window_reward == pytest.approx(10.0)


def test_checkpoint_fails_on_infeasible_constraint():
    st = filled_state(reward_value=10.0)
    assert not checkpoint_ok(st, np.array([-0.1, 0.2]))


def test_checkpoint_fails_on_unstable_lambda():
    st = filled_state(window=4)
    st.lam_history.clear()
    for v in (0.0, 1.0, 0.0, 1.0):
        st.lam_history.append(np.array([v, v]))
    assert not checkpoint_ok(st, np.array([0.1, 0.1]))


def test_checkpoint_fails_without_full_history():
    st = filled_state(window=5)
    st.lam_history.pop()
    assert not checkpoint_ok(st, np.array([0.1, 0.1]))


def test_checkpoint_fails_on_stale_reward():
    st = filled_state(reward_value=1.0)
    st.best_window_reward = 2.0
    assert not checkpoint_ok(st, np.array([0.1, 0.1]))
    assert st.best_window_reward == 2.0


def test_constant_history_has_zero_std():
    st = filled_state(lam=(0.7, 0.3))
    assert (lam_history_std(st) == 0.0).all()


def test_checkpoint_is_monotone_in_each_clause():
    # fixing any failing clause, holding the others, never flips True->False
    base_fail = {
        "mhat": np.array([-0.5, 0.1]),
        "lam_hist": [np.array([v, v]) for v in (0.0, 9.0, 0.0, 9.0, 0.0)],
        "reward": 1.0,
        "best": 5.0,
    }
    fixes = {
        "mhat": np.array([0.5, 0.1]),
        "lam_hist": [np.array([1.0, 1.0])] * 5,
        "reward": 10.0,
    }

    def build(mhat, lam_hist, rew, best):
        st = filled_state(window=5)
        st.lam_history.clear()
        for v in lam_hist:
            st.lam_history.append(v)
        st.reward_window.clear()
        for _ in range(5):
            record_reward(st, rew)
        st.best_window_reward = best
        return checkpoint_ok(st, mhat)

    for flip in ("mhat", "lam_hist", "reward"):
        args = dict(base_fail)
        assert not build(args["mhat"], args["lam_hist"], args["reward"], args["best"])
        args[flip] = fixes[flip]
        before = build(args["mhat"], args["lam_hist"], args["reward"], args["best"])
        args_all = dict(base_fail, **fixes)
        after = build(args_all["mhat"], args_all["lam_hist"], args_all["reward"], args_all["best"])
        assert after  # all clauses fixed -> True
        assert before in (False, True)  # fixing one clause never makes a passing set fail
