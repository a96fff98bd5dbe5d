"""Routers and navigation services.

Routing is edge-based: origins and destinations are edges, and the search
runs on the edge-connectivity graph (edge B follows edge A when B leaves
the node A enters). The cost of a route is the sum of per-edge weights over
all its edges, endpoints included. Ties between equal-cost routes are broken
by the lexicographically smallest edge-id sequence so runs replay exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

from .errors import MissingRouteError, NoRouteError, RouteValidationError
from .network import RoadNetwork

_BACKWARD_CACHE_MAX = 512


@dataclass(frozen=True)
class Route:
    """Ordered edge sequence for one vehicle."""

    vehicle_id: str
    edges: tuple[str, ...]
    depart_time: float = 0.0
    provenance: str = "control"

    @property
    def origin(self) -> str:
        return self.edges[0]

    @property
    def destination(self) -> str:
        return self.edges[-1]

    def edge_set(self) -> frozenset[str]:
        return frozenset(self.edges)


def validate_route(network: RoadNetwork, route: Route) -> None:
    """Raise :class:`RouteValidationError` unless the route is nonempty and
    consecutive edges are connected head-to-tail."""
    if not route.edges:
        raise RouteValidationError(f"vehicle {route.vehicle_id!r}: empty route")
    for eid in route.edges:
        if eid not in network.edges:
            raise RouteValidationError(
                f"vehicle {route.vehicle_id!r}: unknown edge {eid!r}"
            )
    for a, b in zip(route.edges, route.edges[1:]):
        if network.edges[b].from_node != network.edges[a].to_node:
            raise RouteValidationError(
                f"vehicle {route.vehicle_id!r}: edges {a!r} -> {b!r} are not connected"
            )


class HistoricalTravelTimes:
    """Expected per-edge travel times a navigation service believes in.

    Missing edges default to free-flow time. Values below free-flow are
    physically meaningless and are clamped up to it.
    """

    def __init__(self, times: dict[str, float] | None = None):
        self.times = dict(times) if times else {}

    @classmethod
    def free_flow(cls) -> "HistoricalTravelTimes":
        return cls({})

    def weight_vector(self, network: RoadNetwork) -> np.ndarray:
        graph = network.edge_graph()
        w = graph.min_travel_time.copy()
        for eid, t in self.times.items():
            idx = network.edge_index.get(eid)
            if idx is not None and t > w[idx]:
                w[idx] = t
        return w


@dataclass(frozen=True)
class PerturbationConfig:
    """Degree of route randomization for the control-group router."""

    w: float = 5.0

    def __post_init__(self):
        if self.w < 1.0:
            raise ValueError(f"perturbation degree must be >= 1, got {self.w}")


class EdgeGraph:
    """Precomputed edge-connectivity arrays plus a Dijkstra engine.

    Arcs of the edge graph carry the weight of the edge being *entered*, so
    backward distances from a destination telescope to full route costs.
    """

    def __init__(self, network: RoadNetwork):
        self.network = network
        n = len(network.edge_ids)
        self.n = n
        self.min_travel_time = np.array(
            [network.edges[eid].min_travel_time for eid in network.edge_ids]
        )
        self.length = np.array([network.edges[eid].length for eid in network.edge_ids])

        indptr = np.zeros(n + 1, dtype=np.int64)
        cols: list[int] = []
        for i, eid in enumerate(network.edge_ids):
            succ = network.successors(eid)  # sorted by edge id
            cols.extend(network.edge_index[s] for s in succ)
            indptr[i + 1] = len(cols)
        self.indptr = indptr
        self.col_idx = np.array(cols, dtype=np.int64) if cols else np.zeros(0, dtype=np.int64)

        # Transpose structure for backward runs; data for transpose row v is
        # w[v] for every entry, so only the row ids are needed.
        coo = csr_matrix(
            (np.ones(len(self.col_idx)), self.col_idx, self.indptr), shape=(n, n)
        ).T.tocsr()
        self.t_indptr = coo.indptr.copy()
        self.t_col_idx = coo.indices.astype(np.int64)
        self.t_rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(self.t_indptr))
        self._backward_cache: dict[tuple[int, int], np.ndarray] = {}

    def successors_idx(self, i: int) -> np.ndarray:
        return self.col_idx[self.indptr[i] : self.indptr[i + 1]]

    def backward_distances(self, dest: int, w: np.ndarray, cacheable: bool = False) -> np.ndarray:
        """Distance from every edge to ``dest`` along forward arcs, excluding
        the starting edge's own weight (``dist[dest] == 0``)."""
        if cacheable:
            key = (hash(w.tobytes()), dest)
            hit = self._backward_cache.get(key)
            if hit is not None:
                return hit
        data = w[self.t_rows]
        graph = csr_matrix((data, self.t_col_idx, self.t_indptr), shape=(self.n, self.n))
        dists = _csgraph_dijkstra(graph, directed=True, indices=dest)
        if cacheable:
            if len(self._backward_cache) >= _BACKWARD_CACHE_MAX:
                self._backward_cache.clear()
            self._backward_cache[key] = dists
        return dists

    def shortest_edge_path(
        self, origin: int, dest: int, w: np.ndarray, cacheable: bool = False
    ) -> list[int]:
        """Minimum-cost edge sequence from ``origin`` to ``dest``.

        Walks forward choosing, at each step, the smallest-id successor that
        is consistent with the backward distance labels; consistency is exact
        because the comparison reuses the very float sums Dijkstra produced.
        """
        if origin == dest:
            return [origin]
        dist_b = self.backward_distances(dest, w, cacheable=cacheable)
        if not np.isfinite(dist_b[origin]):
            ids = self.network.edge_ids
            raise NoRouteError(f"no route from edge {ids[origin]!r} to edge {ids[dest]!r}")
        path = [origin]
        current = origin
        for _ in range(self.n):
            nxt = -1
            for s in self.successors_idx(current):
                if dist_b[s] + w[s] == dist_b[current]:
                    nxt = int(s)
                    break
            if nxt < 0:
                # Float non-associativity left no exactly-consistent arc;
                # fall back to the numerically closest one.
                succ = self.successors_idx(current)
                gaps = dist_b[succ] + w[succ] - dist_b[current]
                nxt = int(succ[int(np.argmin(np.abs(gaps)))])
            path.append(nxt)
            if nxt == dest:
                return path
            current = nxt
        raise NoRouteError("route reconstruction exceeded edge count; graph inconsistent")


def build_edge_graph(network: RoadNetwork) -> EdgeGraph:
    return EdgeGraph(network)


def route_cost(network: RoadNetwork, route: Route, weights: np.ndarray | None = None) -> float:
    """Sum of per-edge weights in path order (free-flow times by default)."""
    graph = network.edge_graph()
    w = graph.min_travel_time if weights is None else weights
    idx = network.edge_index
    return float(sum(w[idx[eid]] for eid in route.edges))


def _route_from_indices(
    network: RoadNetwork, idx_path: list[int], vehicle_id: str, depart_time: float, provenance: str
) -> Route:
    ids = network.edge_ids
    return Route(
        vehicle_id=vehicle_id,
        edges=tuple(ids[i] for i in idx_path),
        depart_time=depart_time,
        provenance=provenance,
    )


def _resolve_endpoints(network: RoadNetwork, origin_edge: str, dest_edge: str) -> tuple[int, int]:
    for eid in (origin_edge, dest_edge):
        if eid not in network.edge_index:
            raise KeyError(f"unknown edge {eid!r}")
    return network.edge_index[origin_edge], network.edge_index[dest_edge]


def fastest_path(
    network: RoadNetwork,
    origin_edge: str,
    dest_edge: str,
    weights: HistoricalTravelTimes | np.ndarray | None = None,
    vehicle_id: str = "",
    depart_time: float = 0.0,
    provenance: str = "fastest",
) -> Route:
    """Minimum total travel time route between two edges.

    ``weights`` may be a :class:`HistoricalTravelTimes`, a raw per-edge
    weight vector in ``network.edge_ids`` order, or ``None`` for free-flow.
    """
    graph = network.edge_graph()
    origin, dest = _resolve_endpoints(network, origin_edge, dest_edge)
    if weights is None:
        w = graph.min_travel_time
    elif isinstance(weights, HistoricalTravelTimes):
        w = weights.weight_vector(network)
    else:
        w = np.asarray(weights, dtype=float)
    idx_path = graph.shortest_edge_path(origin, dest, w, cacheable=True)
    return _route_from_indices(network, idx_path, vehicle_id, depart_time, provenance)


def perturbed_fastest_path(
    network: RoadNetwork,
    origin_edge: str,
    dest_edge: str,
    cfg: PerturbationConfig,
    rng: np.random.Generator,
    vehicle_id: str = "",
    depart_time: float = 0.0,
) -> Route:
    """Fastest path on independently perturbed free-flow times.

    Every edge weight is multiplied by a fresh uniform draw from ``[1, w)``
    on every invocation, so two vehicles with the same origin-destination
    pair may be assigned different routes. ``w == 1`` reproduces
    :func:`fastest_path` exactly for any seed.
    """
    graph = network.edge_graph()
    origin, dest = _resolve_endpoints(network, origin_edge, dest_edge)
    factors = rng.uniform(1.0, cfg.w, size=graph.n)
    w = graph.min_travel_time * factors
    idx_path = graph.shortest_edge_path(origin, dest, w, cacheable=False)
    return _route_from_indices(network, idx_path, vehicle_id, depart_time, "control")


class NavigationService:
    """A deterministic route recommender.

    Given identical (origin, destination, departure time, historical data),
    a service always returns an identical route; randomness lives only in
    the control-group router.
    """

    name: str = "service"
    criterion: str = ""

    def route(self, network: RoadNetwork, request, history: HistoricalTravelTimes | None) -> Route:
        raise NotImplementedError


class FastestHistoricalService(NavigationService):
    """Minimizes expected travel time under the service's historical data."""

    name = "fastest-historical"
    criterion = "expected travel time"

    def route(self, network, request, history):
        hist = history or HistoricalTravelTimes.free_flow()
        return fastest_path(
            network,
            request.origin_edge,
            request.destination_edge,
            weights=hist,
            vehicle_id=request.vehicle_id,
            depart_time=request.depart_time,
            provenance=self.name,
        )


class ShortestService(NavigationService):
    """Minimizes total route length in meters."""

    name = "shortest"
    criterion = "route length"

    def route(self, network, request, history):
        graph = network.edge_graph()
        o, d = _resolve_endpoints(network, request.origin_edge, request.destination_edge)
        idx_path = graph.shortest_edge_path(o, d, graph.length, cacheable=True)
        return _route_from_indices(
            network, idx_path, request.vehicle_id, request.depart_time, self.name
        )


class EcoService(NavigationService):
    """Trades travel time against a length-proportional fuel cost.

    Edge weight is ``lam * time + (1 - lam) * length * fuel_factor``;
    ``fuel_factor`` (seconds per meter) makes the two terms commensurable.
    """

    name = "eco"
    criterion = "time/fuel trade-off"

    def __init__(self, lam: float = 0.5, fuel_factor: float = 0.1):
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {lam}")
        self.lam = lam
        self.fuel_factor = fuel_factor

    def route(self, network, request, history):
        graph = network.edge_graph()
        hist = history or HistoricalTravelTimes.free_flow()
        times = hist.weight_vector(network)
        w = self.lam * times + (1.0 - self.lam) * graph.length * self.fuel_factor
        o, d = _resolve_endpoints(network, request.origin_edge, request.destination_edge)
        idx_path = graph.shortest_edge_path(o, d, w, cacheable=True)
        return _route_from_indices(
            network, idx_path, request.vehicle_id, request.depart_time, self.name
        )


class FileAdapterService(NavigationService):
    """Replays routes precomputed outside the simulator.

    File format, one record per line:
    ``vehicle_id,depart_s,edge_id_1;edge_id_2;...`` or
    ``vehicle_id,depart_s,GPS,x1 y1;x2 y2;...`` (GPS records are map-matched
    at load time).
    """

    name = "file-adapter"
    criterion = "precomputed"

    def __init__(self, routes: dict[tuple[str, float], tuple[str, ...]]):
        self._routes = dict(routes)
        self._by_vehicle: dict[str, list[tuple[str, ...]]] = {}
        for (vid, _), edges in self._routes.items():
            self._by_vehicle.setdefault(vid, []).append(edges)

    @classmethod
    def from_file(cls, path, network: RoadNetwork, match_config=None) -> "FileAdapterService":
        routes: dict[tuple[str, float], tuple[str, ...]] = {}
        with open(path, encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split(",", 3)
                if len(parts) < 3:
                    raise RouteValidationError(f"{path}:{line_no}: malformed record")
                vid, depart_s = parts[0], float(parts[1])
                if parts[2] == "GPS":
                    if len(parts) < 4:
                        raise RouteValidationError(f"{path}:{line_no}: GPS record without points")
                    from .mapmatch import MatchConfig, lcss_match

                    points = [
                        tuple(float(v) for v in pt.split())
                        for pt in parts[3].split(";")
                        if pt.strip()
                    ]
                    matched = lcss_match(points, network, match_config or MatchConfig())
                    edges = matched.edges
                else:
                    edges = tuple(e for e in parts[2].split(";") if e)
                route = Route(vehicle_id=vid, edges=edges, depart_time=depart_s, provenance=cls.name)
                validate_route(network, route)
                routes[(vid, depart_s)] = edges
        return cls(routes)

    def route(self, network, request, history):
        key = (request.vehicle_id, float(request.depart_time))
        edges = self._routes.get(key)
        if edges is None:
            candidates = self._by_vehicle.get(request.vehicle_id, [])
            if len(candidates) == 1:
                edges = candidates[0]
            else:
                raise MissingRouteError(
                    f"no precomputed route for vehicle {request.vehicle_id!r} "
                    f"departing at {request.depart_time}"
                )
        route = Route(
            vehicle_id=request.vehicle_id,
            edges=edges,
            depart_time=request.depart_time,
            provenance=self.name,
        )
        validate_route(network, route)
        return route


def service_route(
    service: NavigationService,
    network: RoadNetwork,
    request,
    history: HistoricalTravelTimes | None = None,
) -> Route:
    """Route one trip request through a navigation service."""
    return service.route(network, request, history)


def _edge_ids(route) -> frozenset[str]:
    if isinstance(route, Route):
        return route.edge_set()
    return frozenset(route)


def route_overlap(a, b) -> float:
    """Jaccard index of the two routes' distinct edge sets.

    Two empty routes are defined as identical (overlap 1).
    """
    ea, eb = _edge_ids(a), _edge_ids(b)
    union = ea | eb
    if not union:
        return 1.0
    return len(ea & eb) / len(union)


@dataclass(frozen=True)
class SimilarityMatrix:
    services: tuple[str, ...]
    mean_overlap: np.ndarray
    exact_match_fraction: np.ndarray

    def pair(self, a: str, b: str) -> tuple[float, float]:
        i, j = self.services.index(a), self.services.index(b)
        return float(self.mean_overlap[i, j]), float(self.exact_match_fraction[i, j])


def service_similarity_matrix(routes_by_service: dict[str, list[Route]]) -> SimilarityMatrix:
    """Pairwise mean Jaccard overlap and exact-match fraction across services.

    All services must cover the same request set, keyed by
    ``(vehicle_id, depart_time)``.
    """
    services = tuple(sorted(routes_by_service))
    keyed: dict[str, dict[tuple[str, float], Route]] = {}
    for name in services:
        keyed[name] = {(r.vehicle_id, r.depart_time): r for r in routes_by_service[name]}
    all_keys = set()
    for table in keyed.values():
        all_keys.update(table)
    missing_report = []
    for name in services:
        missing = sorted(all_keys - set(keyed[name]))
        if missing:
            missing_report.append(f"{name}: missing {missing}")
    if missing_report:
        raise ValueError("mismatched request sets; " + "; ".join(missing_report))
    keys = sorted(all_keys)

    k = len(services)
    mean_overlap = np.ones((k, k))
    exact = np.ones((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            overlaps = []
            matches = []
            for key in keys:
                ra, rb = keyed[services[i]][key], keyed[services[j]][key]
                overlaps.append(route_overlap(ra, rb))
                matches.append(ra.edges == rb.edges)
            mean_overlap[i, j] = mean_overlap[j, i] = float(np.mean(overlaps)) if overlaps else 1.0
            exact[i, j] = exact[j, i] = float(np.mean(matches)) if matches else 1.0
    return SimilarityMatrix(services, mean_overlap, exact)
