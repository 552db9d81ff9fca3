"""Receding-horizon episode loop: sense, grow, rebase, decide, move.

The robot is a holonomic point that follows its route exactly at constant
speed. Every route segment starting at the robot's position is checked
before it is followed, so the executed trajectory is a chain of feasible
edges.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .global_graph import Graph, connect, harvest, shortest_path
from .hd_rrt import (
    FeasibilityParams,
    HazardLayer,
    Tree,
    check_feasibility,
    enters_hazard,
    extend,
    gradability,
    meta_count,
    prune_and_rebase,
    select_new_root,
    window_contains,
)
from .subgoals import (
    CostParams,
    NoSubgoal,
    Source,
    Subgoal,
    coverage_ratio,
    select_subgoal,
    update_candidates,
)
from .terrain import HeightField, KnownTerrain, TerrainSpec, elevation_at, generate_terrain, sense

# fixed per-node footprint for the memory proxy
NODE_BYTES = 64
# idle ticks before a local set smaller than n_delta is accepted
SMALL_LOCAL_GRACE = 3


class Mode(str, enum.Enum):
    PRUNED = "pruned"
    FULL_TREE = "full_tree"


@dataclass
class EpisodeConfig:
    terrain: TerrainSpec = field(default_factory=TerrainSpec)
    start: tuple[float, float] = (3.0, 3.0)
    target: tuple[float, float] = (29.0, 29.0)
    window_w: int = 40
    window_h: int = 40
    sensing_radius: float = 6.0
    r_ext: float = 1.5
    feasibility: FeasibilityParams = field(default_factory=FeasibilityParams)
    cost: CostParams = field(default_factory=CostParams)
    n_s: int = 3
    extends_per_cycle: int = 60
    speed: float = 0.5
    max_ticks: int = 600
    seed: int = 0
    mode: Mode = Mode.PRUNED
    rebase_threshold: float | None = None
    k_nn: int = 5
    patience: int = 20

    def validate(self) -> None:
        self.terrain.validate()
        self.feasibility.validate(self.terrain.resolution)
        self.cost.validate()
        if tuple(self.start) == tuple(self.target):
            raise ValueError("start and target coincide")
        if self.max_ticks <= 0:
            raise ValueError("max_ticks must be positive")
        if self.extends_per_cycle < 1:
            raise ValueError("extends_per_cycle must be >= 1")
        if self.window_w < 2 or self.window_h < 2:
            raise ValueError("window must be at least 2 x 2 cells")
        if self.sensing_radius <= 0:
            raise ValueError("sensing_radius must be positive")
        if self.r_ext <= 0:
            raise ValueError("r_ext must be positive")
        if self.speed <= 0:
            raise ValueError("speed must be positive")
        if not 1 <= self.n_s <= 8:
            raise ValueError("n_s must lie in 1..8")
        if self.k_nn < 1:
            raise ValueError("k_nn must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.rebase_threshold is not None and self.rebase_threshold <= 0:
            raise ValueError("rebase_threshold must be positive")

    @property
    def threshold(self) -> float:
        return self.r_ext if self.rebase_threshold is None else self.rebase_threshold


@dataclass
class TrajectoryRow:
    tick: int
    x: float
    y: float
    elev: float
    node_count: int
    graph_nodes: int
    graph_edges: int
    branch: str
    subgoal_x: float
    subgoal_y: float


@dataclass
class Decision:
    tick: int
    n_local: int
    n_global: int
    x: float
    y: float
    cost: float
    branch: str


@dataclass(frozen=True)
class ExecutedEdge:
    """Part of a planned edge the robot drove: ``start -> end`` along ``start -> planned_end``."""

    start: tuple[float, float]
    end: tuple[float, float]
    planned_end: tuple[float, float]


@dataclass
class EpisodeMetrics:
    success: bool
    status: str
    ticks: int
    trajectory: list[TrajectoryRow]
    path_length: float
    roughness: float
    node_counts: list[int]
    memory: list[int]
    graph_nodes: int
    graph_edges: int
    decisions: list[Decision]
    rebase_positions: list[tuple[float, float]]
    executed: list[ExecutedEdge]
    hazard_entries: int
    hazard_cells: int
    mode: Mode
    seed: int

    @property
    def peak_node_count(self) -> int:
        return max(self.node_counts)

    @property
    def final_memory(self) -> int:
        return self.memory[-1]

    def summary(self) -> dict:
        return {
            "success": self.success,
            "status": self.status,
            "mode": self.mode.value,
            "seed": self.seed,
            "ticks": self.ticks,
            "path_length": round(self.path_length, 6),
            "roughness": round(self.roughness, 6),
            "peak_node_count": self.peak_node_count,
            "final_node_count": self.node_counts[-1],
            "graph_nodes": self.graph_nodes,
            "graph_edges": self.graph_edges,
            "memory_bytes": self.final_memory,
            "rebases": len(self.rebase_positions) - 1,
            "decisions": len(self.decisions),
            "hazard_cells": self.hazard_cells,
            "hazard_entries": self.hazard_entries,
        }


class Navigator:
    """State of one episode; call :meth:`step` until :attr:`done`."""

    def __init__(self, config: EpisodeConfig, field_: HeightField | None = None):
        config.validate()
        self.config = config
        self.field = generate_terrain(config.terrain) if field_ is None else field_
        for name, p in (("start", config.start), ("target", config.target)):
            if not self.field.contains(*p):
                raise ValueError(f"{name} {tuple(p)} lies outside the terrain")
        self.target = (float(config.target[0]), float(config.target[1]))
        self.rng = np.random.default_rng(config.seed)
        self.hazard = HazardLayer.like(self.field)
        self.hazard.protect(config.start)
        self.known = KnownTerrain.empty_like(self.field, hazard=self.hazard.flags)
        self.robot = (float(config.start[0]), float(config.start[1]))
        self.local = self._sense(None)
        self.tree = Tree(
            self.robot,
            elevation_at(self.field, *self.robot),
            config.r_ext,
            keep_removed=config.mode is Mode.FULL_TREE,
        )
        self.graph = Graph(merge_radius=self.field.resolution / 2)

        self.route: list[tuple[float, float]] = []
        self.route_kind = "none"
        self.subgoal: Subgoal | None = None
        self.edge_start = self.robot
        self.last_rebase = self.robot
        self.rebase_positions = [self.tree.root.position]
        self.tick = 0
        self.idle = 0
        self.rebased = False
        self.done = False
        self.status = "running"
        self.path_length = 0.0
        self.hazard_entries = 0
        self.executed: list[ExecutedEdge] = []
        self.decisions: list[Decision] = []
        self.rows: list[TrajectoryRow] = []
        self.node_counts: list[int] = []
        self.memory: list[int] = []
        self._record()
        if math.dist(self.robot, self.target) <= config.cost.reach_eps:
            self._finish("reached")

    # -- sensing and structure maintenance ---------------------------------

    def _sense(self, prior):
        cfg = self.config
        local = sense(
            self.field,
            self.robot,
            prior,
            window=(cfg.window_w, cfg.window_h),
            radius=cfg.sensing_radius,
            hazard_layer=self.hazard,
        )
        self.known.absorb(local)
        return local

    def _rebase(self) -> None:
        cfg = self.config
        new_root = select_new_root(self.tree, self.robot, self.local)
        extra = () if new_root is None else (new_root,)
        h = harvest(self.graph, self.tree, extra_branches=extra)
        prune_and_rebase(
            self.tree, self.robot, self.local, prune=cfg.mode is Mode.PRUNED, n_s=cfg.n_s, params=cfg.feasibility
        )
        self.rebase_positions.append(self.tree.root.position)
        connect(self.graph, h.new_ids, self.known, cfg.feasibility, cfg.k_nn, links=h.links)
        self.last_rebase = self.robot

    def _retire_graph_candidates(self) -> None:
        cfg = self.config
        for node in self.graph.candidates():
            if math.dist(node.position, self.robot) <= cfg.cost.reach_eps:
                node.consumed = True
            elif window_contains(self.local, node.position):
                if coverage_ratio(node.position, self.local, cfg.r_ext) > cfg.cost.delta:
                    node.consumed = True

    # -- decision making ----------------------------------------------------

    @property
    def at_vertex(self) -> bool:
        return self.robot == self.edge_start

    def _route_blocked(self, upto: int | None = None) -> bool:
        pts = [self.robot, *self.route[:upto]]
        return any(enters_hazard(self.known, a, b) for a, b in zip(pts, pts[1:]))

    def _needs_replan(self) -> bool:
        if not self.route:
            return True
        if self.route_kind == "global":
            if self.graph[self.subgoal.ref].consumed:
                return True
        return self._route_blocked()

    def _set_route(self, route, kind, subgoal) -> None:
        if not self.at_vertex:
            self.executed.append(ExecutedEdge(self.edge_start, self.robot, self.route[0]))
            self.edge_start = self.robot
        self.route = list(route)
        self.route_kind = kind
        self.subgoal = subgoal

    def _plan_local(self, s: Subgoal):
        cfg = self.config
        pts = [self.tree[i].position for i in self.tree.branch(s.ref)]
        for k in range(len(pts) - 1, -1, -1):
            if math.dist(self.robot, pts[k]) <= 1e-9:
                return pts[k + 1 :] or None
            if check_feasibility(self.robot, pts[k], self.local, cfg.feasibility).feasible:
                return pts[k:]
        return None

    def _plan_global(self, s: Subgoal):
        cfg = self.config
        route = shortest_path(self.graph, self.robot, s.ref, self.known, cfg.feasibility, cfg.k_nn)
        if route is None:
            return None
        pts = [self.graph[i].position for i in route.ids]
        if pts and math.dist(pts[0], self.robot) <= 1e-9:
            pts = pts[1:]
        return pts or None

    def _decide(self, local_set: list[Subgoal]) -> None:
        cfg = self.config
        if self.route_kind != "target" and window_contains(self.local, self.target):
            if check_feasibility(self.robot, self.target, self.local, cfg.feasibility).feasible:
                self._set_route([self.target], "target", None)
                self._log(len(local_set), 0, self.target, math.dist(self.robot, self.target), "target")
                return
        if not self._needs_replan():
            if self.rebased and self.route_kind == "local" and len(local_set) >= cfg.cost.n_delta:
                # the root moved: refresh the local choice, never fall back from here
                sel = select_subgoal(local_set, [], cfg.cost, self.target)
                closer = math.dist(sel.subgoal.position, self.target) < math.dist(self.subgoal.position, self.target)
                if sel.subgoal.ref != self.subgoal.ref and closer:
                    plan = self._plan_local(sel.subgoal)
                    if plan is not None:
                        self._set_route(plan, "local", sel.subgoal)
                        self._log(len(local_set), 0, sel.subgoal.position, sel.subgoal.cost, "local")
            return

        global_set = [
            Subgoal(n.position, Source.GLOBAL, n.id, n.nabla_max)
            for n in self.graph.candidates()
            if not window_contains(self.local, n.position)
        ]
        n_local, n_global = len(local_set), len(global_set)
        pools = {Source.LOCAL: list(local_set), Source.GLOBAL: global_set}
        while True:
            try:
                sel = select_subgoal(
                    pools[Source.LOCAL],
                    pools[Source.GLOBAL],
                    cfg.cost,
                    self.target,
                    allow_small_local=self.idle >= SMALL_LOCAL_GRACE,
                )
            except NoSubgoal:
                self._set_route([], "none", None)
                self.idle += 1
                if self.idle >= cfg.patience:
                    self._finish("no_subgoal")
                return
            s = sel.subgoal
            plan = self._plan_local(s) if sel.source is Source.LOCAL else self._plan_global(s)
            if plan is not None:
                break
            pools[sel.source].remove(s)
        self.idle = 0
        self._set_route(plan, sel.source.value, s)
        self._log(n_local, n_global, s.position, s.cost, sel.source.value)

    def _log(self, n_local, n_global, pos, cost, branch) -> None:
        self.decisions.append(Decision(self.tick, n_local, n_global, pos[0], pos[1], cost, branch))

    # -- motion -------------------------------------------------------------

    def _advance(self) -> None:
        remaining = self.config.speed
        while remaining > 0 and self.route:
            nxt = self.route[0]
            d = math.dist(self.robot, nxt)
            if d <= remaining:
                end = nxt
                remaining -= d
            else:
                f = remaining / d
                end = (self.robot[0] + (nxt[0] - self.robot[0]) * f, self.robot[1] + (nxt[1] - self.robot[1]) * f)
                d, remaining = remaining, 0.0
            if enters_hazard(self.known, self.robot, end):
                self.hazard_entries += 1
            self.hazard.protect(self.robot, end)
            self.robot = end
            self.path_length += d
            if end == nxt:
                self.executed.append(ExecutedEdge(self.edge_start, nxt, nxt))
                self.edge_start = nxt
                self.route.pop(0)
        if not self.route and self.route_kind == "global" and self.subgoal is not None:
            self.graph[self.subgoal.ref].consumed = True

    # -- episode control ----------------------------------------------------

    def _record(self) -> None:
        sg = self.subgoal.position if self.subgoal is not None else (
            self.target if self.route_kind == "target" else (math.nan, math.nan)
        )
        self.node_counts.append(self.tree.node_count)
        self.memory.append((self.tree.node_count + len(self.graph)) * NODE_BYTES)
        self.rows.append(
            TrajectoryRow(
                self.tick,
                self.robot[0],
                self.robot[1],
                elevation_at(self.field, *self.robot),
                self.tree.node_count,
                len(self.graph),
                self.graph.edge_count,
                self.route_kind,
                sg[0],
                sg[1],
            )
        )

    def _finish(self, status: str) -> None:
        self.done = True
        self.status = status

    def step(self) -> None:
        if self.done:
            raise RuntimeError("episode already terminated")
        cfg = self.config
        self.local = self._sense(self.local)
        for _ in range(cfg.extends_per_cycle):
            extend(self.tree, self.local, self.rng, cfg.feasibility, cfg.n_s, self.hazard)
        self.rebased = math.dist(self.robot, self.last_rebase) >= cfg.threshold
        if self.rebased:
            self._rebase()
        local_set = update_candidates(self.tree, self.local, cfg.cost, self.tick, cfg.r_ext)
        self._retire_graph_candidates()
        self._decide(local_set)
        if not self.done:
            self._advance()
        self.tick += 1
        self._record()
        if math.dist(self.robot, self.target) <= cfg.cost.reach_eps:
            self._finish("reached")
        elif not self.done and self.tick >= cfg.max_ticks:
            self._finish("max_ticks")

    def finalize(self) -> EpisodeMetrics:
        """Record the last root in the graph and assemble metrics."""
        cfg = self.config
        h = harvest(self.graph, self.tree)
        connect(self.graph, h.new_ids, self.known, cfg.feasibility, cfg.k_nn, links=h.links)
        if not self.at_vertex:
            self.executed.append(ExecutedEdge(self.edge_start, self.robot, self.route[0]))
            self.edge_start = self.robot
        return EpisodeMetrics(
            success=self.status == "reached",
            status=self.status,
            ticks=self.tick,
            trajectory=self.rows,
            path_length=self.path_length,
            roughness=roughness(self.field, self.executed, cfg.feasibility.meta_len),
            node_counts=self.node_counts,
            memory=self.memory,
            graph_nodes=len(self.graph),
            graph_edges=self.graph.edge_count,
            decisions=self.decisions,
            rebase_positions=self.rebase_positions,
            executed=self.executed,
            hazard_entries=self.hazard_entries,
            hazard_cells=self.hazard.count,
            mode=cfg.mode,
            seed=cfg.seed,
        )

    def run(self) -> EpisodeMetrics:
        while not self.done:
            self.step()
        return self.finalize()


def roughness(field_: HeightField, executed, meta_len: float) -> float:
    """Mean absolute elevation change per meter over the executed edges."""
    rise = run = 0.0
    for e in executed:
        length = math.dist(e.start, e.end)
        if length == 0:
            continue
        step = length / meta_count(length, meta_len)
        rise += float(np.abs(gradability(e.start, e.end, field_, meta_len)).sum()) * step
        run += length
    return rise / run if run > 0 else 0.0


def run_episode(config: EpisodeConfig, field_: HeightField | None = None) -> EpisodeMetrics:
    return Navigator(config, field_).run()
