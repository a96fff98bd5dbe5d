"""Road network model: a directed weighted multigraph with CSV load/save,
validation, summary statistics, and a synthetic grid generator.

Networks are immutable after construction and safe to share across
concurrent simulation runs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import NetworkFormatError

NODES_FILE = "nodes.csv"
EDGES_FILE = "edges.csv"

_NODE_HEADER = ["node_id", "x_m", "y_m"]
_EDGE_HEADER = [
    "edge_id",
    "from_node",
    "to_node",
    "length_m",
    "speed_limit_ms",
    "lanes",
    "capacity_vph",
]


@dataclass(frozen=True)
class Edge:
    """One directed road segment.

    ``min_travel_time`` is always derived as ``length / speed_limit``; it is
    never read from file.
    """

    id: str
    from_node: str
    to_node: str
    length: float  # meters
    speed_limit: float  # m/s
    lanes: int
    capacity: float  # vehicles/hour
    min_travel_time: float = field(init=False)

    def __post_init__(self):
        if self.length <= 0:
            raise NetworkFormatError(f"edge {self.id!r}: length must be > 0, got {self.length}")
        if self.speed_limit <= 0:
            raise NetworkFormatError(
                f"edge {self.id!r}: speed_limit must be > 0, got {self.speed_limit}"
            )
        if self.lanes < 1:
            raise NetworkFormatError(f"edge {self.id!r}: lanes must be >= 1, got {self.lanes}")
        if self.capacity <= 0:
            raise NetworkFormatError(
                f"edge {self.id!r}: capacity must be > 0, got {self.capacity}"
            )
        object.__setattr__(self, "min_travel_time", self.length / self.speed_limit)


class RoadNetwork:
    """Directed weighted multigraph over named nodes.

    Parallel edges (same endpoint pair, distinct ids) are permitted. Node
    coordinates are planar meters and serve map matching, tessellation, and
    plotting; routing uses only topology and edge attributes.
    """

    def __init__(self, node_coords: dict[str, tuple[float, float]], edges: list[Edge]):
        self.node_coords = dict(node_coords)
        self.nodes = frozenset(self.node_coords)
        self.edges: dict[str, Edge] = {}
        self.out_edges: dict[str, list[str]] = {n: [] for n in self.nodes}
        self.in_edges: dict[str, list[str]] = {n: [] for n in self.nodes}
        for e in edges:
            if e.id in self.edges:
                raise NetworkFormatError(f"duplicate edge id {e.id!r}")
            for endpoint in (e.from_node, e.to_node):
                if endpoint not in self.nodes:
                    raise NetworkFormatError(
                        f"edge {e.id!r} references undeclared node {endpoint!r}"
                    )
            self.edges[e.id] = e
            self.out_edges[e.from_node].append(e.id)
            self.in_edges[e.to_node].append(e.id)
        for adj in self.out_edges.values():
            adj.sort()
        for adj in self.in_edges.values():
            adj.sort()
        # Stable edge ordering used for weight vectors and tie-breaking.
        self.edge_ids: tuple[str, ...] = tuple(sorted(self.edges))
        self.edge_index: dict[str, int] = {eid: i for i, eid in enumerate(self.edge_ids)}
        self._edge_graph = None

    def __eq__(self, other):
        if not isinstance(other, RoadNetwork):
            return NotImplemented
        return self.node_coords == other.node_coords and self.edges == other.edges

    def __repr__(self):
        return f"<RoadNetwork {len(self.nodes)} nodes, {len(self.edges)} edges>"

    def successors(self, edge_id: str) -> list[str]:
        """Edges that can directly follow ``edge_id`` on a route."""
        return self.out_edges[self.edges[edge_id].to_node]

    def edge_geometry(self, edge_id: str) -> tuple[tuple[float, float], tuple[float, float]]:
        e = self.edges[edge_id]
        return self.node_coords[e.from_node], self.node_coords[e.to_node]

    def edge_midpoint(self, edge_id: str) -> tuple[float, float]:
        (x1, y1), (x2, y2) = self.edge_geometry(edge_id)
        return (x1 + x2) / 2.0, (y1 + y2) / 2.0

    def edge_graph(self):
        """Cached edge-connectivity graph used by the routers."""
        if self._edge_graph is None:
            from .routing import build_edge_graph

            self._edge_graph = build_edge_graph(self)
        return self._edge_graph


@dataclass(frozen=True)
class NetworkStats:
    num_nodes: int
    num_edges: int
    edge_node_ratio: float
    total_edge_length_km: float
    total_lane_length_km: float


@dataclass(frozen=True)
class ValidationReport:
    """Connectivity diagnostics; report-only, never raises."""

    num_components: int
    largest_component_size: int
    unreachable_from_largest: frozenset[str]
    cannot_reach_largest: frozenset[str]
    sink_only_nodes: frozenset[str]

    @property
    def flagged_nodes(self) -> frozenset[str]:
        return self.unreachable_from_largest | self.cannot_reach_largest | self.sink_only_nodes

    @property
    def ok(self) -> bool:
        return not self.flagged_nodes


def _parse_row(row: dict, fields: dict, path: Path, line: int) -> dict:
    out = {}
    for name, conv in fields.items():
        raw = row.get(name)
        if raw is None or raw == "":
            raise NetworkFormatError(f"{path}:{line}: missing value for {name!r}")
        try:
            out[name] = conv(raw)
        except ValueError as exc:
            raise NetworkFormatError(f"{path}:{line}: bad {name!r} value {raw!r}") from exc
    return out


def load_network(path: str | Path) -> RoadNetwork:
    """Load a network from ``<path>/nodes.csv`` and ``<path>/edges.csv``.

    Raises :class:`NetworkFormatError` with file and line number on parse
    failures, invariant violations, or dangling endpoints.
    """
    base = Path(path)
    nodes_path = base / NODES_FILE
    edges_path = base / EDGES_FILE
    for p in (nodes_path, edges_path):
        if not p.is_file():
            raise NetworkFormatError(f"network file not found: {p}")

    node_coords: dict[str, tuple[float, float]] = {}
    with open(nodes_path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != _NODE_HEADER:
            raise NetworkFormatError(
                f"{nodes_path}:1: expected header {','.join(_NODE_HEADER)}"
            )
        for line, row in enumerate(reader, start=2):
            vals = _parse_row(row, {"node_id": str, "x_m": float, "y_m": float}, nodes_path, line)
            nid = vals["node_id"]
            if nid in node_coords:
                raise NetworkFormatError(f"{nodes_path}:{line}: duplicate node id {nid!r}")
            node_coords[nid] = (vals["x_m"], vals["y_m"])

    edges: list[Edge] = []
    with open(edges_path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != _EDGE_HEADER:
            raise NetworkFormatError(
                f"{edges_path}:1: expected header {','.join(_EDGE_HEADER)}"
            )
        for line, row in enumerate(reader, start=2):
            vals = _parse_row(
                row,
                {
                    "edge_id": str,
                    "from_node": str,
                    "to_node": str,
                    "length_m": float,
                    "speed_limit_ms": float,
                    "lanes": int,
                    "capacity_vph": float,
                },
                edges_path,
                line,
            )
            for endpoint in (vals["from_node"], vals["to_node"]):
                if endpoint not in node_coords:
                    raise NetworkFormatError(
                        f"{edges_path}:{line}: edge {vals['edge_id']!r} references "
                        f"undeclared node {endpoint!r}"
                    )
            try:
                edges.append(
                    Edge(
                        id=vals["edge_id"],
                        from_node=vals["from_node"],
                        to_node=vals["to_node"],
                        length=vals["length_m"],
                        speed_limit=vals["speed_limit_ms"],
                        lanes=vals["lanes"],
                        capacity=vals["capacity_vph"],
                    )
                )
            except NetworkFormatError as exc:
                raise NetworkFormatError(f"{edges_path}:{line}: {exc}") from exc

    return RoadNetwork(node_coords, edges)


def save_network(network: RoadNetwork, path: str | Path) -> None:
    """Write ``nodes.csv`` and ``edges.csv``; inverse of :func:`load_network`."""
    base = Path(path)
    base.mkdir(parents=True, exist_ok=True)
    with open(base / NODES_FILE, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(_NODE_HEADER)
        for nid in sorted(network.node_coords):
            x, y = network.node_coords[nid]
            writer.writerow([nid, repr(x), repr(y)])
    with open(base / EDGES_FILE, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(_EDGE_HEADER)
        for eid in network.edge_ids:
            e = network.edges[eid]
            writer.writerow(
                [e.id, e.from_node, e.to_node, repr(e.length), repr(e.speed_limit), e.lanes, repr(e.capacity)]
            )


def _strongly_connected_components(network: RoadNetwork) -> list[set[str]]:
    """Tarjan's algorithm, iterative to survive deep grids."""
    index_of: dict[str, int] = {}
    lowlink: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    components: list[set[str]] = []
    counter = 0

    for root in sorted(network.nodes):
        if root in index_of:
            continue
        work = [(root, iter(network.out_edges[root]))]
        index_of[root] = lowlink[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            advanced = False
            for eid in it:
                succ = network.edges[eid].to_node
                if succ not in index_of:
                    index_of[succ] = lowlink[succ] = counter
                    counter += 1
                    stack.append(succ)
                    on_stack.add(succ)
                    work.append((succ, iter(network.out_edges[succ])))
                    advanced = True
                    break
                if succ in on_stack:
                    lowlink[node] = min(lowlink[node], index_of[succ])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[node])
            if lowlink[node] == index_of[node]:
                comp = set()
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.add(w)
                    if w == node:
                        break
                components.append(comp)
    return components


def validate(network: RoadNetwork) -> ValidationReport:
    """Connectivity report: SCCs, nodes cut off from the largest component,
    and sink-only nodes (incoming edges but no way out, a deadlock risk)."""
    if not network.nodes:
        return ValidationReport(0, 0, frozenset(), frozenset(), frozenset())

    components = _strongly_connected_components(network)
    largest = max(components, key=lambda c: (len(c), min(c)))

    # Forward reachability from the largest component.
    reachable = set(largest)
    frontier = list(largest)
    while frontier:
        node = frontier.pop()
        for eid in network.out_edges[node]:
            succ = network.edges[eid].to_node
            if succ not in reachable:
                reachable.add(succ)
                frontier.append(succ)
    # Backward reachability into the largest component.
    co_reachable = set(largest)
    frontier = list(largest)
    while frontier:
        node = frontier.pop()
        for eid in network.in_edges[node]:
            pred = network.edges[eid].from_node
            if pred not in co_reachable:
                co_reachable.add(pred)
                frontier.append(pred)

    sink_only = {
        n
        for n in network.nodes
        if not network.out_edges[n] and network.in_edges[n]
    }
    return ValidationReport(
        num_components=len(components),
        largest_component_size=len(largest),
        unreachable_from_largest=frozenset(network.nodes - reachable),
        cannot_reach_largest=frozenset(network.nodes - co_reachable),
        sink_only_nodes=frozenset(sink_only),
    )


def network_stats(network: RoadNetwork) -> NetworkStats:
    num_nodes = len(network.nodes)
    num_edges = len(network.edges)
    total_len = sum(e.length for e in network.edges.values())
    total_lane_len = sum(e.length * e.lanes for e in network.edges.values())
    ratio = num_edges / num_nodes if num_nodes else math.nan
    return NetworkStats(
        num_nodes=num_nodes,
        num_edges=num_edges,
        edge_node_ratio=ratio,
        total_edge_length_km=total_len / 1000.0,
        total_lane_length_km=total_lane_len / 1000.0,
    )


def generate_grid(
    rows: int,
    cols: int,
    edge_length: float = 100.0,
    speed_limit: float = 13.89,
    lanes: int = 1,
    capacity_vph: float = 1800.0,
) -> RoadNetwork:
    """Bidirectional lattice with deterministic ids.

    Node ``n<r>-<c>`` sits at ``(c * edge_length, r * edge_length)``; every
    neighbouring pair is joined by one edge per direction, so interior nodes
    have degree 8 (4 in, 4 out).
    """
    if rows < 2 or cols < 2:
        raise ValueError(f"grid needs rows, cols >= 2, got {rows}x{cols}")

    def node_id(r: int, c: int) -> str:
        return f"n{r}-{c}"

    node_coords = {
        node_id(r, c): (c * edge_length, r * edge_length)
        for r in range(rows)
        for c in range(cols)
    }
    edges = []

    def add_pair(a: str, b: str):
        for u, v in ((a, b), (b, a)):
            edges.append(
                Edge(
                    id=f"{u}>{v}",
                    from_node=u,
                    to_node=v,
                    length=edge_length,
                    speed_limit=speed_limit,
                    lanes=lanes,
                    capacity=capacity_vph,
                )
            )

    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                add_pair(node_id(r, c), node_id(r, c + 1))
            if r + 1 < rows:
                add_pair(node_id(r, c), node_id(r + 1, c))
    return RoadNetwork(node_coords, edges)
