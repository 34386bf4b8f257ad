"""UAV fleet mobility, distance-gated connectivity and routing toward the header."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Fleet:
    """Positions of all UAVs; row ``i`` is ``(x, y, z)`` of UAV ``i`` in metres."""

    positions: np.ndarray
    header: int
    region: tuple[float, float]
    v_max: float

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if not 0 <= self.header < len(self.positions):
            raise ValueError("header id out of range")

    @property
    def N(self) -> int:
        return len(self.positions)

    @property
    def is_header(self) -> np.ndarray:
        psi = np.zeros(self.N)
        psi[self.header] = 1.0
        return psi

    def copy(self) -> "Fleet":
        return Fleet(self.positions.copy(), self.header, self.region, self.v_max)


@dataclass(frozen=True)
class TopologySnapshot:
    slot: int
    adjacency: np.ndarray
    distances: np.ndarray
    next_hop: tuple[int | None, ...]
    header: int
    in_links: tuple[tuple[int, ...], ...] = field(default=())

    @property
    def N(self) -> int:
        return len(self.next_hop)

    def link_distance(self, i: int) -> float:
        j = self.next_hop[i]
        return 0.0 if j is None else float(self.distances[i, j])

    def routed_links(self) -> list[tuple[int, int]]:
        return [(i, j) for i, j in enumerate(self.next_hop) if j is not None]

    def tree_adjacency(self) -> np.ndarray:
        """Symmetric parent/child matrix of the routing tree."""
        a = np.zeros((self.N, self.N))
        for i, j in self.routed_links():
            a[i, j] = a[j, i] = 1.0
        return a

    def postorder(self) -> list[int]:
        """Nodes ordered so every predecessor precedes its successor.

        Unrouted nodes come first; the rest follow leaf-to-root by hop depth.
        """
        depth = [-1] * self.N
        for i in range(self.N):
            if i == self.header:
                depth[i] = 0
                continue
            hops, j = 0, i
            while j is not None and j != self.header and hops <= self.N:
                j = self.next_hop[j]
                hops += 1
            depth[i] = hops if j == self.header else -1
        reachable = sorted((i for i in range(self.N) if depth[i] >= 0), key=lambda i: (-depth[i], i))
        return [i for i in range(self.N) if depth[i] < 0] + reachable


def random_fleet(
    rng: np.random.Generator,
    N: int,
    region: tuple[float, float],
    altitude: float,
    v_max: float,
    d_max: float | None = None,
    max_tries: int = 10_000,
) -> Fleet:
    """Uniform initial placement with a random header.

    With ``d_max`` given, placements are redrawn until the graph is connected.
    """
    for _ in range(max_tries):
        xy = rng.uniform((0.0, 0.0), region, size=(N, 2))
        pos = np.column_stack([xy, np.full(N, altitude)])
        if d_max is None or _connected(build_adjacency(pos, d_max)):
            break
    else:
        raise RuntimeError("could not draw a connected placement; raise d_max or N")
    header = int(rng.integers(N))
    return Fleet(pos, header, tuple(region), v_max)


def _connected(adj: np.ndarray) -> bool:
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(adj[i]):
            if j not in seen:
                seen.add(int(j))
                stack.append(int(j))
    return len(seen) == len(adj)


def _reflect(x: np.ndarray, hi: float) -> np.ndarray:
    period = 2.0 * hi
    x = np.mod(x, period)
    return np.where(x > hi, period - x, x)


def step_mobility(fleet: Fleet, dt: float, rng: np.random.Generator) -> Fleet:
    """Random direction, random speed walk with reflection at the region border."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    speed = rng.uniform(0.0, 1.0, size=fleet.N) * fleet.v_max
    heading = rng.uniform(0.0, 2 * np.pi, size=fleet.N)
    pos = fleet.positions.copy()
    pos[:, 0] = _reflect(pos[:, 0] + speed * dt * np.cos(heading), fleet.region[0])
    pos[:, 1] = _reflect(pos[:, 1] + speed * dt * np.sin(heading), fleet.region[1])
    return Fleet(pos, fleet.header, fleet.region, fleet.v_max)


def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    return np.sqrt(np.sum(diff**2, axis=-1))


def build_adjacency(positions, d_max: float) -> np.ndarray:
    if isinstance(positions, Fleet):
        positions = positions.positions
    d = pairwise_distances(np.asarray(positions, dtype=float))
    adj = (d <= d_max).astype(float)
    np.fill_diagonal(adj, 0.0)
    return adj


def edge_cost(d: float, d_max: float, hop_weight: float, loss_weight: float) -> float:
    return hop_weight + loss_weight * (d / d_max) ** 2


def route(
    adjacency: np.ndarray,
    distances: np.ndarray,
    header: int,
    d_max: float,
    hop_weight: float = 1.0,
    loss_weight: float = 1.0,
) -> tuple[int | None, ...]:
    """Shortest-path next hops toward ``header``.

    Edge cost is ``hop_weight + loss_weight * (d / d_max)**2``. Among
    neighbours on equally short paths the smallest id wins. Nodes that
    cannot reach the header get ``None``.
    """
    n = len(adjacency)
    cost = np.where(adjacency > 0, hop_weight + loss_weight * (distances / d_max) ** 2, np.inf)
    dist = np.full(n, np.inf)
    dist[header] = 0.0
    heap = [(0.0, header)]
    done = np.zeros(n, dtype=bool)
    while heap:
        du, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v in np.flatnonzero(adjacency[u]):
            nd = du + cost[u, v]
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, int(v)))

    next_hop: list[int | None] = [None] * n
    for i in range(n):
        if i == header or not np.isfinite(dist[i]):
            continue
        best, best_j = np.inf, None
        for j in np.flatnonzero(adjacency[i]):
            c = cost[i, j] + dist[j]
            # relative slack absorbs summation-order rounding between equal paths
            if best_j is None or c < best - 1e-12 * max(1.0, abs(best)):
                best, best_j = c, int(j)
        next_hop[i] = best_j
    return tuple(next_hop)


def snapshot(
    fleet: Fleet, slot: int, d_max: float, hop_weight: float = 1.0, loss_weight: float = 1.0
) -> TopologySnapshot:
    adj = build_adjacency(fleet.positions, d_max)
    dist = pairwise_distances(fleet.positions)
    nh = route(adj, dist, fleet.header, d_max, hop_weight, loss_weight)
    in_links = tuple(tuple(i for i in range(fleet.N) if nh[i] == j) for j in range(fleet.N))
    return TopologySnapshot(slot, adj, dist, nh, fleet.header, in_links)


def topology_records(topo: TopologySnapshot) -> list[tuple[int, int, int, float]]:
    """``(slot, i, j, distance)`` for every routed link."""
    return [(topo.slot, i, j, float(topo.distances[i, j])) for i, j in topo.routed_links()]
