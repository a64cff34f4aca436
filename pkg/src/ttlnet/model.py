"""Static network description: directed graph, link resources, commodities, paths."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class LinkParams:
    """Resource parameters of one directed link.

    block_capacity: packets per slot carried by one switched-on resource block.
    max_blocks: largest number of blocks that can be active simultaneously.
    block_cost: cost of operating one block for one slot.
    """

    block_capacity: int
    max_blocks: int
    block_cost: float

    @property
    def capacity(self) -> int:
        """Total packets per slot when every block is active."""
        return self.block_capacity * self.max_blocks


@dataclass
class NetworkGraph:
    """Directed graph with per-link resource parameters.

    One entry per ordered (src, dst) pair; self-loops and multi-links are
    not representable.
    """

    nodes: list[str]
    links: dict[tuple[str, str], LinkParams] = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = list(self.nodes)
        self._node_set = set(self.nodes)

    def has_node(self, n: str) -> bool:
        return n in self._node_set

    def out_neighbors(self, i: str) -> list[str]:
        return sorted(j for (a, j) in self.links if a == i)

    def in_neighbors(self, i: str) -> list[str]:
        return sorted(a for (a, j) in self.links if j == i)

    def sorted_links(self) -> list[tuple[str, str]]:
        return sorted(self.links)

    def max_cost(self) -> float:
        """Cost of running every block on every link for one slot."""
        return sum(p.max_blocks * p.block_cost for p in self.links.values())


@dataclass(frozen=True)
class Commodity:
    """A source-destination service flow with its own deadline and reliability need.

    lifetime: slots a fresh packet may live; one unit is consumed per slot.
    reliability_target: required ratio of on-time deliveries to mean arrivals.
    arrival_rate: mean packets injected at the source per slot.
    """

    source: str
    destination: str
    lifetime: int
    reliability_target: float
    arrival_rate: float


@dataclass(frozen=True)
class Path:
    """A simple route for one commodity, identified by a stable integer id."""

    nodes: tuple[str, ...]
    commodity: int
    path_id: int

    @property
    def hops(self) -> int:
        return len(self.nodes) - 1

    def links(self) -> list[tuple[str, str]]:
        return list(zip(self.nodes[:-1], self.nodes[1:]))

    def next_hop(self, i: str) -> str | None:
        """Successor of node i along the path, or None for the last node."""
        for a, b in zip(self.nodes[:-1], self.nodes[1:]):
            if a == i:
                return b
        return None


def validate_graph(graph: NetworkGraph) -> list[str]:
    """Return all invariant violations; an empty list means the graph is valid."""
    errors = []
    seen = set()
    for n in graph.nodes:
        if n in seen:
            errors.append(f"duplicate node {n!r}")
        seen.add(n)
    for (i, j), params in graph.links.items():
        if i == j:
            errors.append(f"self-loop on node {i!r}")
        if not graph.has_node(i):
            errors.append(f"unknown node {i!r} in link ({i!r}, {j!r})")
        if not graph.has_node(j):
            errors.append(f"unknown node {j!r} in link ({i!r}, {j!r})")
        if params.block_capacity < 1:
            errors.append(f"non-positive block capacity on link ({i!r}, {j!r})")
        if params.max_blocks < 0:
            errors.append(f"negative max blocks on link ({i!r}, {j!r})")
        if params.block_cost < 0:
            errors.append(f"negative block cost on link ({i!r}, {j!r})")
    return errors


def validate_commodity(graph: NetworkGraph, c: Commodity) -> list[str]:
    """Invariant violations of a single commodity against its graph."""
    errors = []
    if not graph.has_node(c.source):
        errors.append(f"unknown source node {c.source!r}")
    if not graph.has_node(c.destination):
        errors.append(f"unknown destination node {c.destination!r}")
    if c.source == c.destination:
        errors.append("source equals destination")
    if c.lifetime < 1:
        errors.append(f"lifetime must be >= 1, got {c.lifetime}")
    if not 0.0 <= c.reliability_target <= 1.0:
        errors.append(f"reliability target outside [0, 1]: {c.reliability_target}")
    if c.arrival_rate < 0:
        errors.append(f"negative arrival rate: {c.arrival_rate}")
    return errors


def enumerate_paths(
    graph: NetworkGraph,
    commodity: Commodity,
    commodity_index: int = 0,
    id_start: int = 0,
) -> list[Path]:
    """All simple source-to-destination routes with at most `lifetime` hops.

    A packet spends one lifetime unit per hop, so longer routes can never
    deliver before expiry. Paths are ordered lexicographically by node
    sequence so ids are stable across runs.
    """
    results: list[tuple[str, ...]] = []
    limit = commodity.lifetime

    def extend(route: list[str], visited: set[str]):
        here = route[-1]
        if here == commodity.destination:
            results.append(tuple(route))
            return
        if len(route) - 1 >= limit:
            return
        for j in graph.out_neighbors(here):
            if j not in visited:
                visited.add(j)
                route.append(j)
                extend(route, visited)
                route.pop()
                visited.remove(j)

    if graph.has_node(commodity.source):
        extend([commodity.source], {commodity.source})
    results.sort()
    return [
        Path(nodes=seq, commodity=commodity_index, path_id=id_start + k)
        for k, seq in enumerate(results)
    ]


def build_path_table(graph: NetworkGraph, commodities: list[Commodity]) -> list[Path]:
    """Paths for every commodity with globally unique, stable ids."""
    table: list[Path] = []
    for ci, com in enumerate(commodities):
        table.extend(enumerate_paths(graph, com, commodity_index=ci, id_start=len(table)))
    return table


def paths_through_link(paths: list[Path], link: tuple[str, str]) -> list[Path]:
    """Subset of `paths` that traverse the directed link (i, j)."""
    i, j = link
    return [p for p in paths if (i, j) in zip(p.nodes[:-1], p.nodes[1:])]
