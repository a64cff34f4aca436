import numpy as np

from ttlnet.model import (
    Commodity,
    LinkParams,
    NetworkGraph,
    build_path_table,
    enumerate_paths,
    paths_through_link,
    validate_graph,
)

from conftest import make_edge_graph, make_edge_commodities
from oracles import nx_simple_paths


def test_validate_empty_graph_ok():
    assert validate_graph(NetworkGraph(nodes=[], links={})) == []


def test_validate_rejects_self_loop():
    g = NetworkGraph(nodes=["a"], links={("a", "a"): LinkParams(1, 1, 0.0)})
    errors = validate_graph(g)
    assert any("self-loop" in e for e in errors)


def test_validate_rejects_unknown_endpoint():
    g = NetworkGraph(nodes=["a"], links={("a", "b"): LinkParams(1, 1, 0.0)})
    errors = validate_graph(g)
    assert any("unknown node 'b'" in e for e in errors)


def test_validate_rejects_bad_parameters():
    g = NetworkGraph(
        nodes=["a", "b", "c"],
        links={
            ("a", "b"): LinkParams(0, 1, 1.0),
            ("b", "c"): LinkParams(5, -1, -2.0),
        },
    )
    errors = validate_graph(g)
    assert any("block capacity" in e for e in errors)
    assert any("max blocks" in e for e in errors)
    assert any("block cost" in e for e in errors)


def test_edge_topology_has_two_routes_per_source():
    graph = make_edge_graph()
    c1 = Commodity("s1", "core", 6, 0.7, 6.0)
    paths = enumerate_paths(graph, c1)
    assert [p.nodes for p in paths] == [("s1", "e1", "core"), ("s1", "e2", "core")]
    assert [p.path_id for p in paths] == [0, 1]


def test_hop_budget_of_one_leaves_no_route():
    graph = make_edge_graph()
    c = Commodity("s1", "core", 1, 0.7, 6.0)
    assert enumerate_paths(graph, c) == []


def test_enumerate_is_deterministic():
    graph = make_edge_graph()
    c = Commodity("s1", "core", 6, 0.7, 6.0)
    a = [p.nodes for p in enumerate_paths(graph, c)]
    b = [p.nodes for p in enumerate_paths(graph, c)]
    assert a == b


def test_enumerate_matches_exhaustive_search_on_random_graphs():
    rng = np.random.default_rng(7)
    names = ["n0", "n1", "n2", "n3", "n4"]
    for trial in range(30):
        links = {}
        for i in names:
            for j in names:
                if i != j and rng.random() < 0.4:
                    links[(i, j)] = LinkParams(3, 2, 1.0)
        graph = NetworkGraph(nodes=names, links=links)
        life = int(rng.integers(1, 6))
        c = Commodity("n0", "n4", life, 0.5, 1.0)
        got = [p.nodes for p in enumerate_paths(graph, c)]
        want = nx_simple_paths(names, list(links), "n0", "n4", life)
        assert got == want
        for p in enumerate_paths(graph, c):
            assert len(set(p.nodes)) == len(p.nodes)
            assert p.hops <= life
            for a, b in p.links():
                assert (a, b) in links


def test_paths_through_link_membership(edge_setup):
    graph, commodities, paths = edge_setup
    via = paths_through_link(paths, ("e1", "core"))
    assert [p.nodes for p in via] == [("s1", "e1", "core"), ("s2", "e1", "core")]
    only_first = [paths[0]]
    assert paths_through_link(only_first, ("e1", "core")) == only_first
    assert paths_through_link(only_first, ("e2", "core")) == []


def test_paths_through_link_equals_naive_scan(edge_setup):
    graph, commodities, paths = edge_setup
    for link in graph.sorted_links():
        got = paths_through_link(paths, link)
        naive = []
        for p in paths:
            hit = False
            for step in range(len(p.nodes) - 1):
                if (p.nodes[step], p.nodes[step + 1]) == link:
                    hit = True
            if hit:
                naive.append(p)
        assert got == naive
        for p in paths:
            assert (p in got) == (link in p.links())


def test_global_path_table_ids_are_dense(edge_setup):
    graph, commodities, paths = edge_setup
    assert [p.path_id for p in paths] == list(range(4))
    assert [p.commodity for p in paths] == [0, 0, 1, 1]
