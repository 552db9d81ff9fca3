import itertools
import math

import numpy as np
import pytest

from hapnav.global_graph import Graph, NodeKind, connect, graph_snapshot, harvest, shortest_path
from hapnav.hd_rrt import Candidate, FeasibilityParams, Tree

from conftest import full_window

P = FeasibilityParams(meta_len=0.1)


def brute_force_path(graph, a, b):
    """Cheapest simple path by enumerating every ordering of intermediate nodes."""
    best = None
    others = [n for n in graph.nodes if n not in (a, b)]
    for r in range(len(others) + 1):
        for mid in itertools.permutations(others, r):
            seq = [a, *mid, b]
            if a == b:
                seq = [a]
            if all(y in graph.adj[x] for x, y in zip(seq, seq[1:])):
                w = sum(graph.adj[x][y].weight for x, y in zip(seq, seq[1:]))
                if best is None or w < best:
                    best = w
    return best


def test_merge_rules():
    g = Graph(0.05)
    a, created = g.add_node((1.0, 1.0), 0.0, NodeKind.WAYPOINT)
    assert created
    b, created = g.add_node((1.02, 1.0), 0.0, NodeKind.CANDIDATE, 0.3)
    assert (b, created) == (a, False)
    assert g[a].kind is NodeKind.CANDIDATE and g[a].nabla_max == 0.3
    g.add_node((1.0, 1.01), 0.0, NodeKind.WAYPOINT)
    assert g[a].kind is NodeKind.CANDIDATE
    g.add_node((1.0, 1.01), 0.0, NodeKind.CANDIDATE, 0.5)
    assert g[a].nabla_max == 0.5
    # a root on a candidate retires it
    g.add_node((1.0, 1.0), 0.0, NodeKind.ROOT)
    assert g[a].kind is NodeKind.ROOT and g[a].consumed
    assert g.roots == [a]
    assert len(g) == 1
    with pytest.raises(ValueError):
        g.add_node((5, 5), 0.0, NodeKind.CANDIDATE, 1.5)


def test_no_self_loops_or_duplicates():
    g = Graph(0.05)
    a, _ = g.add_node((0, 0), 0, NodeKind.ROOT)
    b, _ = g.add_node((1, 0), 0, NodeKind.ROOT)
    assert not g.add_edge(a, a, 0.0)
    assert g.add_edge(a, b, 1.0)
    assert not g.add_edge(b, a, 1.0)
    assert g.edge_count == 1


def test_nearest_ties_by_id():
    g = Graph(0.01)
    for p in [(1, 0), (0, 1), (-1, 0), (0, -1)]:
        g.add_node(p, 0, NodeKind.WAYPOINT)
    assert g.nearest((0, 0), 2) == [0, 1]
    assert g.nearest((0, 0), 3, exclude=0) == [1, 2, 3]
    assert Graph(0.1).nearest((0, 0)) == []


def test_harvest_without_candidates_adds_only_root():
    t = Tree((1.0, 1.0), 0.0, 0.5)
    t.add_child(0, (1.4, 1.0), 0.0, 0.0)
    g = Graph(0.05)
    h = harvest(g, t)
    assert len(h.new_ids) == 1 and g[h.new_ids[0]].kind is NodeKind.ROOT


def test_harvest_single_branch():
    t = Tree((1.0, 1.0), 0.0, 0.5)
    a = t.add_child(0, (1.6, 1.0), 0.0, 0.0).id
    b = t.add_child(a, (2.2, 1.0), 0.0, 0.0).id
    t[b].candidate = Candidate(0.3, 0)
    g = Graph(0.05)
    h = harvest(g, t)
    kinds = [g[i].kind for i in h.new_ids]
    assert kinds == [NodeKind.ROOT, NodeKind.WAYPOINT, NodeKind.CANDIDATE]
    assert g[h.new_ids[2]].nabla_max == 0.3
    assert h.links == [(0, 1), (1, 2)]
    # idempotent at the same position
    assert harvest(g, t).new_ids == []


def test_harvest_subsamples_waypoints():
    t = Tree((0.0, 0.0), 0.0, 1.0)
    prev = 0
    for k in range(1, 11):
        prev = t.add_child(prev, (0.25 * k, 0.0), 0.0, 0.0).id
    t[prev].candidate = Candidate(0.1, 0)
    g = Graph(0.05)
    harvest(g, t)
    xs = sorted(n.position[0] for n in g.nodes.values())
    assert xs[0] == 0.0 and xs[-1] == 2.5
    assert all(b - a >= 1.0 - 1e-9 for a, b in zip(xs, xs[1:-1]))


def test_connect_flat_and_isolated(flat_field):
    w = full_window(flat_field)
    g = Graph(0.05)
    a, _ = g.add_node((1.0, 1.0), 0.0, NodeKind.ROOT)
    assert connect(g, [a], w, P) == 0
    b, _ = g.add_node((2.0, 3.0), 0.0, NodeKind.ROOT)
    assert connect(g, [b], w, P) == 1
    assert g.adj[a][b].weight == pytest.approx(math.sqrt(5))


def test_connect_blocked_by_hazard(flat_field):
    hazard = np.zeros(flat_field.shape, dtype=bool)
    hazard[:, 24:26] = True
    w = full_window(flat_field, hazard)
    g = Graph(0.05)
    a, _ = g.add_node((1.0, 2.0), 0.0, NodeKind.ROOT)
    b, _ = g.add_node((4.0, 2.0), 0.0, NodeKind.ROOT)
    assert connect(g, [b], w, P) == 0


def _three_chain():
    g = Graph(0.01)
    a, _ = g.add_node((0, 0), 0, NodeKind.ROOT)
    b, _ = g.add_node((1, 0), 0, NodeKind.ROOT)
    c, _ = g.add_node((2, 0), 0, NodeKind.ROOT)
    g.add_edge(a, b, 1.0)
    g.add_edge(b, c, 1.0)
    g.add_edge(a, c, 3.0)
    return g, a, b, c


def test_shortest_path_chain_matches_enumeration():
    g, a, b, c = _three_chain()
    r = shortest_path(g, (0, 0), c)
    assert r.ids == [a, b, c]
    assert r.length == 2.0 == brute_force_path(g, a, c)


def test_shortest_path_identity_and_unreachable():
    g, a, b, c = _three_chain()
    r = shortest_path(g, (0, 0), a)
    assert r.ids == [a] and r.length == 0
    d, _ = g.add_node((5, 5), 0, NodeKind.ROOT)
    # entering at the nearest node only, d is cut off
    assert shortest_path(g, (0, 0), d, k_entry=1) is None
    assert shortest_path(g, (0, 0), 99) is None
    with pytest.raises(ValueError):
        shortest_path(Graph(0.1), (0, 0), 0)


def test_shortest_path_random_graphs_match_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(40):
        g = Graph(1e-6)
        n = int(rng.integers(2, 8))
        for _ in range(n):
            g.add_node(tuple(rng.uniform(0, 10, 2)), 0, NodeKind.WAYPOINT)
        for x in range(n):
            for y in range(x + 1, n):
                if rng.random() < 0.45:
                    g.add_edge(x, y, g.distance(x, y))
        r = shortest_path(g, g[0].position, n - 1, k_entry=1)
        want = brute_force_path(g, 0, n - 1)
        if want is None:
            assert r is None
        else:
            assert r.length == pytest.approx(want, rel=1e-12)
            assert r.length == sum(g.adj[x][y].weight for x, y in zip(r.ids, r.ids[1:]))


def test_entry_requires_feasible_virtual_edge(flat_field):
    hazard = np.zeros(flat_field.shape, dtype=bool)
    hazard[:, 24:26] = True
    w = full_window(flat_field, hazard)
    g = Graph(0.05)
    a, _ = g.add_node((3.0, 2.0), 0.0, NodeKind.ROOT)
    assert shortest_path(g, (1.0, 2.0), a, w, P) is None
    assert shortest_path(g, (1.0, 2.0), a).ids == [a]


def test_snapshot_format():
    g, a, b, c = _three_chain()
    lines = graph_snapshot(g).splitlines()
    assert lines[0] == "N 0 root 0.000000 0.000000 0.000000 0.000000"
    assert [l for l in lines if l.startswith("E")] == [
        "E 0 1 1.000000",
        "E 0 2 3.000000",
        "E 1 2 1.000000",
    ]
