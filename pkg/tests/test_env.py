import numpy as np
import pytest

from ttlnet.env import InfeasibleAction, LifetimeEnv, NetAction, resolve_lowest_lifetime
from ttlnet.model import Commodity, LinkParams, NetworkGraph, build_path_table

from conftest import make_edge_graph, make_edge_commodities


def make_two_node():
    graph = NetworkGraph(nodes=["s", "d"], links={("s", "d"): LinkParams(10, 1, 1.0)})
    commodities = [Commodity("s", "d", 3, 0.7, 0.0)]
    paths = build_path_table(graph, commodities)
    return LifetimeEnv(graph, commodities, paths)


def idle_action(env):
    return NetAction(
        blocks=np.zeros(len(env.links), dtype=np.int64),
        route=np.zeros(env.n_units, dtype=np.int64) if env.paths is not None else None,
    )


def test_reset_gives_empty_queues():
    env = make_two_node()
    state = env.reset(seed=0)
    assert state.t == 0
    assert state.total() == 0


def test_same_seed_same_arrival_stream():
    graph = make_edge_graph()
    commodities = make_edge_commodities()
    env = LifetimeEnv(graph, commodities, build_path_table(graph, commodities))
    env.reset(seed=42)
    a = [env.sample_arrivals() for _ in range(100)]
    env.reset(seed=42)
    b = [env.sample_arrivals() for _ in range(100)]
    assert all((x == y).all() for x, y in zip(a, b))


def test_different_seeds_diverge_within_100_slots():
    graph = make_edge_graph()
    commodities = make_edge_commodities()
    env = LifetimeEnv(graph, commodities, build_path_table(graph, commodities))
    env.reset(seed=1)
    a = np.array([env.sample_arrivals() for _ in range(100)])
    env.reset(seed=2)
    b = np.array([env.sample_arrivals() for _ in range(100)])
    assert (a != b).any()


def test_zero_rate_never_arrives():
    env = make_two_node()
    env.reset(seed=0)
    for _ in range(200):
        assert env.sample_arrivals()[0] == 0


def test_poisson_moments_match_rate():
    graph = make_edge_graph()
    commodities = make_edge_commodities(rate1=6.0, rate2=6.0)
    env = LifetimeEnv(graph, commodities, build_path_table(graph, commodities))
    env.reset(seed=123)
    draws = np.array([env.sample_arrivals() for _ in range(100_000)], dtype=float)
    assert abs(draws[:, 0].mean() - 6.0) < 0.1
    assert abs(draws[:, 0].var() - 6.0) < 0.25


def test_send_two_of_three_delivers_two():
    env = make_two_node()
    state = env.reset(seed=0)
    state.q[0, 0, 2] = 3
    action = idle_action(env)
    action.blocks[0] = 1
    action.flows[(0, 1, 0, 2)] = 2
    out = env.step(state, action, np.array([0]))
    assert out.delivered.tolist() == [2]
    assert out.expired == 0
    assert out.state.q[0, 0, 1] == 1
    assert out.state.total() == 1
    assert out.cost == 1.0


def test_lifetime_one_backlog_expires_when_held():
    env = make_two_node()
    state = env.reset(seed=0)
    state.q[0, 0, 1] = 4
    out = env.step(state, idle_action(env), np.array([0]))
    assert out.expired == 4
    assert out.state.total() == 0


def test_send_at_lifetime_one_arrives_dead():
    env = make_two_node()
    state = env.reset(seed=0)
    state.q[0, 0, 1] = 2
    action = idle_action(env)
    action.blocks[0] = 1
    action.flows[(0, 1, 0, 1)] = 2
    out = env.step(state, action, np.array([0]))
    assert out.delivered.tolist() == [0]
    assert out.expired == 2


def test_arrivals_can_be_forwarded_same_slot():
    env = make_two_node()
    state = env.reset(seed=0)
    action = idle_action(env)
    action.route = np.array([5])
    action.blocks[0] = 1
    action.flows[(0, 1, 0, 3)] = 5
    out = env.step(state, action, np.array([5]))
    assert out.delivered.tolist() == [5]
    assert out.state.total() == 0


def test_overdraw_raises_instead_of_clipping():
    env = make_two_node()
    state = env.reset(seed=0)
    state.q[0, 0, 2] = 3
    action = idle_action(env)
    action.blocks[0] = 1
    action.flows[(0, 1, 0, 2)] = 4
    with pytest.raises(InfeasibleAction, match="exceeds backlog"):
        env.step(state, action, np.array([0]))
    # state untouched on failure
    assert state.q[0, 0, 2] == 3


def test_capacity_violation_raises():
    env = make_two_node()
    state = env.reset(seed=0)
    state.q[0, 0, 3] = 12
    action = idle_action(env)
    action.blocks[0] = 1
    action.flows[(0, 1, 0, 3)] = 11
    with pytest.raises(InfeasibleAction, match="allocated capacity"):
        env.step(state, action, np.array([0]))


def test_block_bound_raises():
    env = make_two_node()
    state = env.reset(seed=0)
    action = idle_action(env)
    action.blocks[0] = 2  # max_blocks is 1
    with pytest.raises(InfeasibleAction, match="outside"):
        env.step(state, action, np.array([0]))


def test_off_path_flow_raises(edge_setup):
    graph, commodities, paths = edge_setup
    env = LifetimeEnv(graph, commodities, paths)
    state = env.reset(seed=0)
    state.q[env.node_index["s1"], 0, 4] = 1  # unit 0 routes via e1
    action = idle_action(env)
    action.blocks[:] = 1
    action.flows[(env.node_index["s1"], env.node_index["e2"], 0, 4)] = 1
    with pytest.raises(InfeasibleAction, match="off its path"):
        env.step(state, action, np.array([0, 0]))


def test_route_counts_must_match_arrivals(edge_setup):
    graph, commodities, paths = edge_setup
    env = LifetimeEnv(graph, commodities, paths)
    state = env.reset(seed=0)
    action = idle_action(env)
    action.route = np.array([1, 1, 0, 0])
    with pytest.raises(InfeasibleAction, match="route assigns"):
        env.step(state, action, np.array([3, 0]))


def test_cost_normalization_endpoints(edge_setup):
    graph, commodities, paths = edge_setup
    env = LifetimeEnv(graph, commodities, paths)
    action = idle_action(env)
    assert env.cost_m0(action) == (0.0, 0.0)
    action.blocks[:] = 1  # every max_blocks is 1
    cost, norm = env.cost_m0(action)
    assert cost == 6.0
    assert norm == 1.0


def test_cost_sums_blocks_times_cost():
    graph = NetworkGraph(
        nodes=["a", "b", "c"],
        links={("a", "b"): LinkParams(5, 3, 1.0), ("b", "c"): LinkParams(5, 3, 1.0)},
    )
    commodities = [Commodity("a", "c", 3, 0.5, 1.0)]
    env = LifetimeEnv(graph, commodities, build_path_table(graph, commodities))
    action = idle_action(env)
    action.blocks[:] = [2, 1]
    cost, norm = env.cost_m0(action)
    assert cost == 3.0
    assert norm == pytest.approx(3.0 / 6.0)


def test_throughput_signal_examples():
    graph = make_edge_graph()
    commodities = make_edge_commodities()
    env = LifetimeEnv(graph, commodities, build_path_table(graph, commodities))
    out = env.step(env.reset(seed=0), idle_action(env), np.array([0, 0]))
    out.delivered = np.array([6, 0])
    assert env.throughput_signal(out, 0) == pytest.approx(6 / 6.0 - 0.7)
    assert env.throughput_signal(out, 1) == pytest.approx(-0.6)
    at_target = LifetimeEnv(
        graph, make_edge_commodities(rate1=10.0), build_path_table(graph, commodities)
    )
    out.delivered = np.array([7, 0])  # exactly 0.7 * 10
    assert at_target.throughput_signal(out, 0) == pytest.approx(0.0)

    zero_rate = LifetimeEnv(
        graph, make_edge_commodities(rate1=0.0), build_path_table(graph, commodities)
    )
    assert zero_rate.throughput_signal(out, 0) == 0.0


def test_resolve_lowest_lifetime_prefers_dying_packets():
    buckets = np.array([0, 2, 0, 3])
    drops, sends = resolve_lowest_lifetime(buckets, drop_count=2, send_count=3)
    assert drops == {1: 2}
    assert sends == {3: 3}


def test_resolve_lowest_lifetime_splits_across_buckets():
    buckets = np.array([0, 1, 2, 4])
    drops, sends = resolve_lowest_lifetime(buckets, drop_count=2, send_count=4)
    assert drops == {1: 1, 2: 1}
    assert sends == {2: 1, 3: 3}


def test_resolve_lowest_lifetime_overdraw_raises():
    with pytest.raises(ValueError):
        resolve_lowest_lifetime(np.array([0, 1]), drop_count=1, send_count=1)
