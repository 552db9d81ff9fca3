"""Persistent roadmap built from harvested tree nodes.

New vertices come from the local tree at every rebase rather than from
sampling; edges are straight segments that pass the same feasibility test
as tree edges, evaluated over everything sensed so far.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .hd_rrt import FeasibilityParams, Tree, check_feasibility
from .terrain import Grid


class NodeKind(str, enum.Enum):
    CANDIDATE = "candidate"
    ROOT = "root"
    WAYPOINT = "waypoint"


# higher wins when two harvested nodes fold into one
_PRECEDENCE = {NodeKind.WAYPOINT: 0, NodeKind.ROOT: 1, NodeKind.CANDIDATE: 2}


@dataclass(eq=False)
class GraphNode:
    id: int
    position: tuple[float, float]
    elevation: float
    kind: NodeKind
    nabla_max: float = 0.0
    consumed: bool = False


@dataclass(frozen=True)
class Edge:
    weight: float
    mean_slope: float


class Route(NamedTuple):
    ids: list[int]
    length: float


class Graph:
    def __init__(self, merge_radius: float):
        self.merge_radius = merge_radius
        self.nodes: dict[int, GraphNode] = {}
        self.adj: dict[int, dict[int, Edge]] = {}
        self.roots: list[int] = []  # Root nodes in the order they were recorded
        self._xy: list[tuple[float, float]] = []
        self._ids: list[int] = []
        self._cache: np.ndarray | None = None
        self._id_cache: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, node_id: int) -> GraphNode:
        return self.nodes[node_id]

    @property
    def edge_count(self) -> int:
        return sum(len(v) for v in self.adj.values()) // 2

    def _coords(self) -> tuple[np.ndarray, np.ndarray]:
        if self._cache is None or len(self._cache) != len(self._xy):
            self._cache = np.array(self._xy, dtype=float).reshape(-1, 2)
            self._id_cache = np.asarray(self._ids)
        return self._cache, self._id_cache

    def nearest(self, pos, k: int = 1, exclude: int | None = None) -> list[int]:
        """Up to ``k`` node ids ordered by distance to ``pos`` (ties by id)."""
        if not self._ids:
            return []
        xy, ids = self._coords()
        d = np.hypot(xy[:, 0] - pos[0], xy[:, 1] - pos[1])
        want = k + (exclude is not None)
        if want < len(d):
            # keep everything tied with the cut-off so tie-breaking stays exact
            cut = np.partition(d, want - 1)[want - 1]
            sel = np.flatnonzero(d <= cut)
        else:
            sel = np.arange(len(d))
        order = sel[np.lexsort((ids[sel], d[sel]))]
        out = []
        for idx in order:
            nid = int(ids[idx])
            if nid == exclude:
                continue
            out.append(nid)
            if len(out) == k:
                break
        return out

    def distance(self, a: int, b: int) -> float:
        return math.dist(self.nodes[a].position, self.nodes[b].position)

    def add_node(self, pos, elevation: float, kind: NodeKind, nabla_max: float = 0.0) -> tuple[int, bool]:
        """Insert a node or fold it into an existing one within ``merge_radius``.

        Returns ``(id, created)``. On a merge the more specific kind wins,
        except that recording a Root on top of a candidate target retires the
        candidate: the robot has stood there, so it is no longer a frontier.
        """
        if not 0.0 <= nabla_max <= 1.0:
            raise ValueError("nabla_max must lie in [0, 1]")
        near = self.nearest(pos)
        if near and math.dist(self.nodes[near[0]].position, pos) <= self.merge_radius:
            node = self.nodes[near[0]]
            if node.kind is NodeKind.ROOT:
                pass
            elif kind is NodeKind.ROOT:
                node.kind = NodeKind.ROOT
                node.consumed = True
                self.roots.append(node.id)
            elif _PRECEDENCE[kind] > _PRECEDENCE[node.kind]:
                node.kind = kind
                node.nabla_max = nabla_max
            elif kind is NodeKind.CANDIDATE and node.kind is NodeKind.CANDIDATE:
                node.nabla_max = max(node.nabla_max, nabla_max)
            return node.id, False
        nid = len(self._ids)
        self.nodes[nid] = GraphNode(nid, (float(pos[0]), float(pos[1])), float(elevation), kind, nabla_max)
        self.adj[nid] = {}
        self._xy.append(self.nodes[nid].position)
        self._ids.append(nid)
        if kind is NodeKind.ROOT:
            self.roots.append(nid)
        return nid, True

    def add_edge(self, a: int, b: int, weight: float, mean_slope: float = 0.0) -> bool:
        if a == b or b in self.adj[a]:
            return False
        e = Edge(weight, mean_slope)
        self.adj[a][b] = e
        self.adj[b][a] = e
        return True

    def edges(self):
        for a in sorted(self.adj):
            for b in sorted(self.adj[a]):
                if a < b:
                    yield a, b, self.adj[a][b]

    def candidates(self) -> list[GraphNode]:
        return [n for n in self.nodes.values() if n.kind is NodeKind.CANDIDATE and not n.consumed]


@dataclass
class Harvest:
    new_ids: list[int]
    links: list[tuple[int, int]]


def _subsample(tree: Tree, ids: list[int], spacing: float) -> list[int]:
    kept = [ids[0]]
    for nid in ids[1:-1]:
        if math.dist(tree[nid].position, tree[kept[-1]].position) >= spacing:
            kept.append(nid)
    if len(ids) > 1:
        kept.append(ids[-1])
    return kept


def harvest(graph: Graph, tree: Tree, *, extra_branches=()) -> Harvest:
    """Copy the current root, every candidate target and the branches leading to them.

    ``extra_branches`` lists further tree node ids whose root branch should
    be kept as waypoints (the navigator passes the upcoming root so the
    robot's own track stays connected). Branch nodes are thinned to
    ``r_ext`` spacing.
    """
    new_ids: list[int] = []
    links: list[tuple[int, int]] = []
    root = tree.root

    def put(node, kind, nabla=0.0):
        gid, created = graph.add_node(node.position, node.elevation, kind, nabla)
        if created:
            new_ids.append(gid)
        return gid

    root_gid = put(root, NodeKind.ROOT)
    targets = [nid for nid in sorted(tree.nodes) if tree[nid].candidate is not None]
    for nid in [*targets, *extra_branches]:
        if nid not in tree or nid == tree.root_id:
            continue
        kept = _subsample(tree, tree.branch(nid), tree.r_ext)
        prev = root_gid
        for k, bid in enumerate(kept[1:], 1):
            node = tree[bid]
            if k == len(kept) - 1 and node.candidate is not None:
                gid = put(node, NodeKind.CANDIDATE, node.candidate.nabla_max)
            else:
                gid = put(node, NodeKind.WAYPOINT)
            if gid != prev:
                links.append((prev, gid))
            prev = gid
    return Harvest(new_ids, links)


def connect(
    graph: Graph,
    new_ids,
    grid: Grid,
    params: FeasibilityParams,
    k_nn: int = 5,
    links=(),
) -> int:
    """Try edges from each new node to its ``k_nn`` nearest peers, then along ``links``."""
    pairs = []
    for nid in new_ids:
        for other in graph.nearest(graph[nid].position, k_nn, exclude=nid):
            pairs.append((nid, other))
    pairs.extend(links)
    added = 0
    for a, b in pairs:
        if a == b or b in graph.adj[a]:
            continue
        pa, pb = graph[a].position, graph[b].position
        res = check_feasibility(pa, pb, grid, params)
        if res.feasible and graph.add_edge(a, b, math.dist(pa, pb), res.mean_slope):
            added += 1
    return added


def _ucs(graph: Graph, start: int, goal: int) -> Route | None:
    frontier = [(0.0, start)]
    best = {start: 0.0}
    parent: dict[int, int] = {}
    done = set()
    while frontier:
        cost, nid = heapq.heappop(frontier)
        if nid in done:
            continue
        if nid == goal:
            path = [nid]
            while path[-1] != start:
                path.append(parent[path[-1]])
            path.reverse()
            return Route(path, cost)
        done.add(nid)
        for nb in sorted(graph.adj[nid]):
            c = cost + graph.adj[nid][nb].weight
            if c < best.get(nb, math.inf):
                best[nb] = c
                parent[nb] = nid
                heapq.heappush(frontier, (c, nb))
    return None


def shortest_path(
    graph: Graph,
    start,
    goal: int,
    grid: Grid | None = None,
    params: FeasibilityParams | None = None,
    k_entry: int = 5,
) -> Route | None:
    """Least-weight route from world position ``start`` to node ``goal``.

    The route enters the graph at the nearest of the ``k_entry`` closest
    nodes that ``start`` can reach by a feasible straight segment (checked
    only when ``grid`` is given) and that leads to ``goal``.
    The returned length covers graph edges only.
    """
    if not graph.nodes:
        raise ValueError("shortest_path on an empty graph")
    if goal not in graph.nodes:
        return None
    for entry in graph.nearest(start, k_entry):
        pos = graph[entry].position
        if math.dist(pos, start) > graph.merge_radius and grid is not None:
            if not check_feasibility(start, pos, grid, params).feasible:
                continue
        route = _ucs(graph, entry, goal)
        if route is not None:
            return route
    return None


def graph_snapshot(graph: Graph) -> str:
    """``N id kind x y elev nabla_max`` lines, then ``E id_a id_b weight`` lines."""
    lines = []
    for nid in sorted(graph.nodes):
        n = graph[nid]
        lines.append(
            f"N {nid} {n.kind.value} {n.position[0]:.6f} {n.position[1]:.6f} "
            f"{n.elevation:.6f} {n.nabla_max:.6f}"
        )
    for a, b, e in graph.edges():
        lines.append(f"E {a} {b} {e.weight:.6f}")
    return "\n".join(lines) + "\n"
