"""Hazard-aware dynamic RRT confined to the robot's sliding window.

The tree grows by uniform sampling over the local map. Each node keeps an
eight-sector record of directions in which extension failed; a node whose
blocked-sector count reaches ``n_s`` is treated as sitting on a hazard,
removed, and inflated into a permanent hazard disc.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .spatial import SpatialHash
from .terrain import Grid, LocalGridMap, elevation_at, elevations_at

SECTORS = 8
SECTOR_WIDTH = 2 * math.pi / SECTORS


@dataclass
class FeasibilityParams:
    alpha_grad: float = math.tan(math.radians(30.0))
    beta_flat: float = 2.0
    meta_len: float = 0.2

    def validate(self, resolution: float | None = None) -> None:
        if self.alpha_grad <= 0:
            raise ValueError("alpha_grad must be positive")
        if self.beta_flat <= 0:
            raise ValueError("beta_flat must be positive")
        if self.meta_len <= 0:
            raise ValueError("meta_len must be positive")
        if resolution is not None and self.meta_len > 2 * resolution + 1e-12:
            raise ValueError("meta_len must not exceed twice the map resolution")


class Verdict(enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Feasibility:
    verdict: Verdict
    reason: str | None = None  # "slope", "flatness" or "hazard" when infeasible
    mean_slope: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.verdict is Verdict.FEASIBLE


def meta_count(length: float, meta_len: float) -> int:
    # tolerance absorbs float noise such as 1.0 / 0.2 -> 5.000000000000001
    return max(1, math.ceil(length / meta_len - 1e-9))


def gradability(p, q, grid: Grid, meta_len: float) -> np.ndarray:
    """Rise over run of each meta segment of ``p -> q``; NaN where Unknown."""
    dx, dy = q[0] - p[0], q[1] - p[1]
    length = math.hypot(dx, dy)
    if length == 0:
        raise ValueError("gradability of a zero-length segment")
    n = meta_count(length, meta_len)
    t = np.linspace(0.0, 1.0, n + 1)
    h = elevations_at(grid, p[0] + t * dx, p[1] + t * dy)
    return np.diff(h) / (length / n)


def traverse_cells(grid: Grid, p, q):
    """Yield grid cells crossed by the segment ``p -> q`` in order of travel."""
    res = grid.resolution
    x0, y0 = grid.origin
    ax, ay = (p[0] - x0) / res, (p[1] - y0) / res
    bx, by = (q[0] - x0) / res, (q[1] - y0) / res
    i, j = math.floor(ay), math.floor(ax)
    ie, je = math.floor(by), math.floor(bx)
    dx, dy = bx - ax, by - ay
    if dx > 0:
        step_j, t_x, dt_x = 1, (j + 1 - ax) / dx, 1 / dx
    elif dx < 0:
        step_j, t_x, dt_x = -1, (ax - j) / -dx, -1 / dx
    else:
        step_j, t_x, dt_x = 0, math.inf, math.inf
    if dy > 0:
        step_i, t_y, dt_y = 1, (i + 1 - ay) / dy, 1 / dy
    elif dy < 0:
        step_i, t_y, dt_y = -1, (ay - i) / -dy, -1 / dy
    else:
        step_i, t_y, dt_y = 0, math.inf, math.inf
    yield i, j
    for _ in range(abs(ie - i) + abs(je - j)):
        if t_x < t_y:
            j += step_j
            t_x += dt_x
        else:
            i += step_i
            t_y += dt_y
        yield i, j


def enters_hazard(grid: Grid, p, q) -> bool:
    """True if the segment moves into a hazard cell.

    Hazard cells at the very start of the segment are ignored so that a
    robot engulfed by a freshly marked disc can still drive out of it.
    """
    hz = grid.hazard
    if hz is None:
        return False
    ny, nx = hz.shape
    left_start = False
    for i, j in traverse_cells(grid, p, q):
        flagged = 0 <= i < ny and 0 <= j < nx and hz[i, j]
        if flagged:
            if left_start:
                return True
        else:
            left_start = True
    return False


def check_feasibility(p, q, grid: Grid, params: FeasibilityParams) -> Feasibility:
    """Classify the straight edge ``p -> q`` over ``grid``.

    Infeasible when it enters a hazard cell, when any meta segment has
    ``|slope| > alpha_grad`` or when the summed ``|slope|`` exceeds
    ``beta_flat``. Violations on known terrain are decisive; otherwise any
    Unknown elevation makes the verdict Unknown.
    """
    if p[0] == q[0] and p[1] == q[1]:
        return Feasibility(Verdict.FEASIBLE)
    if enters_hazard(grid, p, q):
        return Feasibility(Verdict.INFEASIBLE, "hazard")
    slopes = np.abs(gradability(p, q, grid, params.meta_len))
    known = ~np.isnan(slopes)
    ks = slopes[known]
    if ks.size and ks.max() > params.alpha_grad:
        return Feasibility(Verdict.INFEASIBLE, "slope")
    if ks.sum() > params.beta_flat:
        return Feasibility(Verdict.INFEASIBLE, "flatness")
    if not known.all():
        return Feasibility(Verdict.UNKNOWN)
    return Feasibility(Verdict.FEASIBLE, mean_slope=float(slopes.mean()))


class HazardLayer:
    """World-indexed, grow-only set of hazard cells.

    Cells in ``protected`` (ground the robot has already driven over) are
    never flagged: having been traversed, they are known to be passable.
    """

    def __init__(self, shape: tuple[int, int], resolution: float, origin=(0.0, 0.0)):
        self.flags = np.zeros(shape, dtype=bool)
        self.protected = np.zeros(shape, dtype=bool)
        self.resolution = resolution
        self.origin = (float(origin[0]), float(origin[1]))

    @classmethod
    def like(cls, grid: Grid) -> "HazardLayer":
        return cls(grid.shape, grid.resolution, grid.origin)

    @property
    def count(self) -> int:
        return int(self.flags.sum())

    def is_flagged(self, x: float, y: float) -> bool:
        i = math.floor((y - self.origin[1]) / self.resolution)
        j = math.floor((x - self.origin[0]) / self.resolution)
        ny, nx = self.flags.shape
        return 0 <= i < ny and 0 <= j < nx and bool(self.flags[i, j])

    def protect(self, p, q=None) -> None:
        """Exempt the cells under the driven segment ``p -> q`` (or the point ``p``) from flagging."""
        ny, nx = self.flags.shape
        cells = traverse_cells(self, p, p if q is None else q)
        for i, j in cells:
            if 0 <= i < ny and 0 <= j < nx:
                self.protected[i, j] = True


def mark_hazard(layer: HazardLayer, node, r_ext: float) -> None:
    """Flag every cell whose center is within ``r_ext`` of ``node``, plus its own cell, except protected ones."""
    x, y = node
    res = layer.resolution
    ox, oy = layer.origin
    ny, nx = layer.flags.shape
    i_lo = max(math.floor((y - r_ext - oy) / res), 0)
    i_hi = min(math.floor((y + r_ext - oy) / res), ny - 1)
    j_lo = max(math.floor((x - r_ext - ox) / res), 0)
    j_hi = min(math.floor((x + r_ext - ox) / res), nx - 1)
    if i_lo <= i_hi and j_lo <= j_hi:
        cy = oy + (np.arange(i_lo, i_hi + 1) + 0.5) * res
        cx = ox + (np.arange(j_lo, j_hi + 1) + 0.5) * res
        disc = (cy[:, None] - y) ** 2 + (cx[None, :] - x) ** 2 <= r_ext * r_ext
        disc &= ~layer.protected[i_lo : i_hi + 1, j_lo : j_hi + 1]
        layer.flags[i_lo : i_hi + 1, j_lo : j_hi + 1] |= disc
    i = math.floor((y - oy) / res)
    j = math.floor((x - ox) / res)
    if 0 <= i < ny and 0 <= j < nx and not layer.protected[i, j]:
        layer.flags[i, j] = True


@dataclass
class Candidate:
    nabla_max: float
    first_seen: int


@dataclass(eq=False)
class TreeNode:
    id: int
    position: tuple[float, float]
    elevation: float
    parent: int | None = None
    children: set[int] = field(default_factory=set)
    saturation: list[int] = field(default_factory=lambda: [0] * SECTORS)
    cum_length: float = 0.0
    cum_gradient: float = 0.0
    cum_turn: float = 0.0
    # attributes of the edge to the parent
    edge_length: float = 0.0
    edge_gradient: float = 0.0
    candidate: Candidate | None = None
    disqualified: bool = False

    @property
    def blocked(self) -> int:
        return sum(self.saturation)

    @property
    def sat_mask(self) -> int:
        return sum(bit << k for k, bit in enumerate(self.saturation))


def turn_angle(a, b, c) -> float:
    """Absolute heading change at ``b`` when driving ``a -> b -> c``."""
    ux, uy = b[0] - a[0], b[1] - a[1]
    vx, vy = c[0] - b[0], c[1] - b[1]
    return abs(math.atan2(ux * vy - uy * vx, ux * vx + uy * vy))


class Tree:
    """Rooted tree with per-node path statistics and a spatial index.

    With ``keep_removed`` the tree counts removed nodes as still resident,
    which is how the full-tree baseline accounts for memory.
    """

    def __init__(self, root, root_elevation: float, r_ext: float, keep_removed: bool = False):
        if r_ext <= 0:
            raise ValueError("r_ext must be positive")
        self.r_ext = r_ext
        self.keep_removed = keep_removed
        self.archived = 0
        self.nodes: dict[int, TreeNode] = {}
        self.index = SpatialHash(r_ext)
        self._next_id = 0
        self.root_id = self._add(root, root_elevation).id

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self.nodes

    def __getitem__(self, node_id: int) -> TreeNode:
        return self.nodes[node_id]

    @property
    def root(self) -> TreeNode:
        return self.nodes[self.root_id]

    @property
    def node_count(self) -> int:
        """Nodes held in memory, including archived ones for the baseline."""
        return len(self.nodes) + self.archived

    def _add(self, pos, elevation, parent=None, edge_length=0.0, edge_gradient=0.0) -> TreeNode:
        node = TreeNode(
            self._next_id,
            (float(pos[0]), float(pos[1])),
            float(elevation),
            edge_length=edge_length,
            edge_gradient=edge_gradient,
        )
        self._next_id += 1
        self.nodes[node.id] = node
        self.index.insert(node.id, *node.position)
        if parent is not None:
            self._link(node, self.nodes[parent])
        return node

    def _link(self, child: TreeNode, parent: TreeNode) -> None:
        child.parent = parent.id
        parent.children.add(child.id)
        child.cum_length = parent.cum_length + child.edge_length
        child.cum_gradient = parent.cum_gradient + child.edge_gradient
        if parent.parent is None:
            child.cum_turn = 0.0
        else:
            grand = self.nodes[parent.parent]
            child.cum_turn = parent.cum_turn + turn_angle(grand.position, parent.position, child.position)

    def add_child(self, parent: int, pos, elevation: float, edge_gradient: float) -> TreeNode:
        p = self.nodes[parent].position
        length = math.hypot(pos[0] - p[0], pos[1] - p[1])
        return self._add(pos, elevation, parent, length, edge_gradient)

    def nearest(self, pos) -> int:
        return self.index.nearest(pos[0], pos[1])

    def near(self, pos, radius: float) -> list[int]:
        return self.index.within(pos[0], pos[1], radius)

    def branch(self, node_id: int) -> list[int]:
        """Node ids from the root down to ``node_id``."""
        out = [node_id]
        node = self.nodes[node_id]
        while node.parent is not None:
            out.append(node.parent)
            node = self.nodes[node.parent]
        out.reverse()
        return out

    def subtree(self, node_id: int) -> list[int]:
        out = [node_id]
        k = 0
        while k < len(out):
            out.extend(sorted(self.nodes[out[k]].children))
            k += 1
        return out

    def leaves(self) -> list[int]:
        return [nid for nid, n in self.nodes.items() if not n.children and nid != self.root_id]

    def refresh(self, start: int | None = None) -> None:
        """Recompute cumulative path statistics below ``start`` (default: root)."""
        start = self.root_id if start is None else start
        node = self.nodes[start]
        if node.parent is None:
            node.cum_length = node.cum_gradient = node.cum_turn = 0.0
            node.edge_length = node.edge_gradient = 0.0
        else:
            self._link(node, self.nodes[node.parent])
        queue = deque([start])
        while queue:
            cur = self.nodes[queue.popleft()]
            for cid in sorted(cur.children):
                self._link(self.nodes[cid], cur)
                queue.append(cid)

    def _drop(self, node_id: int) -> TreeNode:
        node = self.nodes.pop(node_id)
        self.index.remove(node_id)
        if self.keep_removed:
            self.archived += 1
        return node

    def detach(self, node_id: int) -> None:
        node = self.nodes[node_id]
        if node.parent is not None:
            self.nodes[node.parent].children.discard(node_id)
            node.parent = None

    def remove_subtree(self, node_id: int) -> list[TreeNode]:
        if node_id == self.root_id:
            raise ValueError("cannot remove the root")
        ids = self.subtree(node_id)
        self.detach(node_id)
        return [self._drop(i) for i in ids]

    def reroot(self, new_root: int) -> None:
        """Make ``new_root`` the root by reversing parent links along its branch."""
        if new_root == self.root_id:
            return
        path = self.branch(new_root)[::-1]  # new_root ... old root
        edges = {nid: (self.nodes[nid].edge_length, self.nodes[nid].edge_gradient) for nid in path}
        for a, b in zip(path, path[1:]):
            na, nb = self.nodes[a], self.nodes[b]
            nb.children.discard(a)
            na.children.add(b)
            nb.parent = a
            nb.edge_length, nb.edge_gradient = edges[a]
        self.nodes[new_root].parent = None
        self.root_id = new_root
        self.refresh()

    def reset(self, root, elevation: float) -> list[TreeNode]:
        """Discard everything and start over from a single root."""
        removed = [self._drop(nid) for nid in sorted(self.nodes)]
        self.root_id = self._add(root, elevation).id
        return removed

    def edges(self):
        for node in self.nodes.values():
            if node.parent is not None:
                yield node.parent, node.id


def sample_new_node(tree: Tree, grid: LocalGridMap, rng: np.random.Generator):
    """Uniform sample over the window, steered to within ``r_ext`` of its nearest node."""
    x0, y0, x1, y1 = grid.extent
    u, v = rng.random(2)
    sx, sy = x0 + u * (x1 - x0), y0 + v * (y1 - y0)
    nearest = tree.nearest((sx, sy))
    nx, ny = tree[nearest].position
    d = math.hypot(sx - nx, sy - ny)
    if d > tree.r_ext:
        s = tree.r_ext / d
        sx, sy = nx + (sx - nx) * s, ny + (sy - ny) * s
    return (sx, sy), nearest


def sector_of(origin, target) -> int:
    theta = math.atan2(target[1] - origin[1], target[0] - origin[0]) % (2 * math.pi)
    return min(int(theta // SECTOR_WIDTH), SECTORS - 1)


def record_failure(tree: Tree, nearest: int, candidate, n_s: int, result: Feasibility) -> bool:
    """Block the sector of ``nearest`` facing ``candidate``; True once saturated."""
    if result.verdict is not Verdict.INFEASIBLE:
        raise ValueError(f"record_failure needs an infeasible edge, got {result.verdict.value}")
    node = tree[nearest]
    node.saturation[sector_of(node.position, candidate)] = 1
    return node.blocked >= n_s


class Outcome(enum.Enum):
    ADDED = "added"
    REJECTED = "rejected"
    SATURATED = "saturated"


@dataclass(frozen=True)
class ExtendResult:
    outcome: Outcome
    node_id: int | None = None


def _choose_parent(tree: Tree, grid, candidate, nearest: int, params) -> tuple[int, float]:
    nearest_node = tree[nearest]
    base = nearest_node.cum_length + math.dist(nearest_node.position, candidate)
    options = []
    for nid in tree.near(candidate, tree.r_ext):
        if nid == nearest:
            continue
        node = tree[nid]
        cost = node.cum_length + math.dist(node.position, candidate)
        if cost < base:
            options.append((cost, nid))
    options.sort()
    for _, nid in options:
        res = check_feasibility(tree[nid].position, candidate, grid, params)
        if res.feasible:
            return nid, res.mean_slope
    return nearest, None


def _remove_saturated(tree: Tree, node_id: int, grid, params) -> list[TreeNode]:
    """Delete a saturated node; reattach each child nearby or drop its subtree."""
    node = tree[node_id]
    children = sorted(node.children)
    for cid in children:
        tree.detach(cid)
    tree.detach(node_id)
    removed = [tree._drop(node_id)]
    for cid in children:
        child = tree[cid]
        banned = set(tree.subtree(cid))
        options = []
        for nid in tree.near(child.position, tree.r_ext):
            if nid in banned:
                continue
            other = tree[nid]
            options.append((other.cum_length + math.dist(other.position, child.position), nid))
        options.sort()
        for _, nid in options:
            res = check_feasibility(tree[nid].position, child.position, grid, params)
            if res.feasible:
                child.edge_length = math.dist(tree[nid].position, child.position)
                child.edge_gradient = res.mean_slope
                tree._link(child, tree[nid])
                tree.refresh(cid)
                break
        else:
            removed.extend(tree._drop(i) for i in sorted(banned))
    return removed


def extend(
    tree: Tree,
    grid: LocalGridMap,
    rng: np.random.Generator,
    params: FeasibilityParams,
    n_s: int,
    hazard_layer: HazardLayer | None = None,
) -> ExtendResult:
    """One sampling attempt of the expansion loop.

    Unknown edges and edges that merely run into already-marked hazard cells
    are rejected without touching saturation vectors: those failures say
    nothing new about the terrain around the nearest node.
    """
    candidate, nearest = sample_new_node(tree, grid, rng)
    near_node = tree[nearest]
    if math.dist(candidate, near_node.position) < 1e-9:
        return ExtendResult(Outcome.REJECTED)
    res = check_feasibility(near_node.position, candidate, grid, params)
    if res.verdict is Verdict.FEASIBLE:
        parent, slope = _choose_parent(tree, grid, candidate, nearest, params)
        if slope is None:
            slope = res.mean_slope
        elev = elevation_at(grid, *candidate)
        node = tree.add_child(parent, candidate, elev, slope)
        return ExtendResult(Outcome.ADDED, node.id)
    if res.verdict is Verdict.UNKNOWN or res.reason == "hazard":
        return ExtendResult(Outcome.REJECTED)
    saturated = record_failure(tree, nearest, candidate, n_s, res)
    if not saturated or nearest == tree.root_id:
        return ExtendResult(Outcome.REJECTED)
    if hazard_layer is not None:
        mark_hazard(hazard_layer, near_node.position, tree.r_ext)
        if isinstance(grid, LocalGridMap):
            grid.absorb_hazard(hazard_layer)
    _remove_saturated(tree, nearest, grid, params)
    return ExtendResult(Outcome.SATURATED, nearest)


def window_contains(grid: Grid, pos) -> bool:
    x0, y0, x1, y1 = grid.extent
    return x0 <= pos[0] <= x1 and y0 <= pos[1] <= y1


def select_new_root(tree: Tree, robot, grid: Grid) -> int | None:
    """Nearest in-window tree node to the robot (lowest id on ties)."""
    x0, y0, x1, y1 = grid.extent
    best, best_d = None, math.inf
    for nid in tree.near(robot, math.hypot(x1 - x0, y1 - y0)):
        node = tree[nid]
        if not window_contains(grid, node.position):
            continue
        d = math.dist(node.position, robot)
        if d < best_d:
            best, best_d = nid, d
    return best


def prune_and_rebase(
    tree: Tree,
    robot,
    grid: LocalGridMap,
    prune: bool = True,
    n_s: int | None = None,
    params: FeasibilityParams | None = None,
) -> list[TreeNode]:
    """Move the root next to the robot and drop structure outside the window.

    The nearest in-window node becomes the root by link reversal. With
    ``prune`` every node outside the window, every non-root node on a hazard
    cell and anything cut off from the new root by those removals is
    dropped; the removed nodes are returned. Given ``n_s``, a former root
    that saturated while it was exempt is removed like any saturated node.
    Without ``prune`` (full-tree baseline) only the root moves.
    """
    new_root = select_new_root(tree, robot, grid)
    if new_root is None:
        if not prune:
            tree.reroot(tree.nearest(robot))
            return []
        elev = elevation_at(grid, *robot)
        return tree.reset(robot, 0.0 if elev is None else elev)
    tree.reroot(new_root)
    if not prune:
        return []

    hz = grid.hazard
    ny, nx = grid.shape

    def doomed(node: TreeNode) -> bool:
        if not window_contains(grid, node.position):
            return True
        if hz is None or node.id == tree.root_id:
            return False
        i, j = grid.cell_of(*node.position)
        return 0 <= i < ny and 0 <= j < nx and bool(hz[i, j])

    removed = []
    queue = deque([tree.root_id])
    while queue:
        cur = tree[queue.popleft()]
        for cid in sorted(cur.children):
            if doomed(tree[cid]):
                removed.extend(tree.remove_subtree(cid))
            else:
                queue.append(cid)
    if n_s is not None:
        for nid in sorted(tree.nodes):
            if nid in tree and nid != tree.root_id and tree[nid].blocked >= n_s:
                removed.extend(_remove_saturated(tree, nid, grid, params or FeasibilityParams()))
    return removed


def tree_snapshot(tree: Tree) -> str:
    """One line per node: ``id parent x y elev sat_mask cum_len`` (parent -1 at the root)."""
    lines = []
    for nid in sorted(tree.nodes):
        n = tree[nid]
        parent = -1 if n.parent is None else n.parent
        lines.append(
            f"{nid} {parent} {n.position[0]:.6f} {n.position[1]:.6f} "
            f"{n.elevation:.6f} {n.sat_mask} {n.cum_length:.6f}"
        )
    return "\n".join(lines) + "\n"
