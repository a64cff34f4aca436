import numpy as np
import pytest

from ttlnet.model import Commodity, LinkParams, NetworkGraph, build_path_table


def make_edge_graph(block_capacity=10, max_blocks=1, block_cost=1.0):
    """Two sources, two relay servers, one core sink."""
    params = LinkParams(block_capacity, max_blocks, block_cost)
    links = {}
    for src in ("s1", "s2"):
        for mid in ("e1", "e2"):
            links[(src, mid)] = params
    for mid in ("e1", "e2"):
        links[(mid, "core")] = params
    return NetworkGraph(nodes=["s1", "s2", "e1", "e2", "core"], links=links)


def make_edge_commodities(rate1=6.0, rate2=6.0, life1=6, life2=4):
    return [
        Commodity("s1", "core", life1, 0.7, rate1),
        Commodity("s2", "core", life2, 0.6, rate2),
    ]


def make_line3_graph(block_capacity=10, max_blocks=2, block_cost=1.0):
    params = LinkParams(block_capacity, max_blocks, block_cost)
    return NetworkGraph(
        nodes=["a", "b", "c"],
        links={("a", "b"): params, ("b", "c"): params},
    )


@pytest.fixture
def edge_setup():
    graph = make_edge_graph()
    commodities = make_edge_commodities()
    paths = build_path_table(graph, commodities)
    return graph, commodities, paths


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
