"""Candidate-target detection, subgoal scoring and the local/global decision rule."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .hd_rrt import Candidate, Tree, window_contains
from .terrain import Grid


class NoSubgoal(RuntimeError):
    """Neither the tree nor the graph offers a subgoal."""


class Source(str, enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"


@dataclass
class CostParams:
    w_alpha: float = 1.0
    w_beta: float = 1.0
    lam: float = 0.5
    delta: float = 0.6
    n_delta: int = 3
    reach_eps: float = 0.3

    def validate(self) -> None:
        if min(self.w_alpha, self.w_beta, self.lam) < 0:
            raise ValueError("cost weights must be >= 0")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if self.n_delta < 1:
            raise ValueError("n_delta must be >= 1")
        if self.reach_eps <= 0:
            raise ValueError("reach_eps must be positive")


@dataclass
class Subgoal:
    position: tuple[float, float]
    source: Source
    ref: int
    nabla_max: float = 0.0
    length: float = 0.0  # summed edge length from the root
    gradient: float = 0.0  # summed per-edge mean |slope| from the root
    turn: float = 0.0  # summed absolute heading change from the root
    cost: float = math.nan


def coverage_ratio(pos, grid: Grid, radius: float) -> float:
    """Observed area inside the disc of ``radius`` about ``pos`` over the disc area.

    A cell counts when its center falls inside the disc and its elevation is
    known. Cells beyond the grid are unknown, except those outside the world
    ``bounds`` (when the grid carries them): nothing there can be explored,
    so they count as observed. Clamped to 1 against discretisation overshoot.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    res = grid.resolution
    ny, nx = grid.shape
    ox, oy = grid.origin
    x, y = pos
    i_lo = math.floor((y - radius - oy) / res)
    i_hi = math.floor((y + radius - oy) / res)
    j_lo = math.floor((x - radius - ox) / res)
    j_hi = math.floor((x + radius - ox) / res)
    ii = np.arange(i_lo, i_hi + 1)
    jj = np.arange(j_lo, j_hi + 1)
    cy = oy + (ii + 0.5) * res
    cx = ox + (jj + 0.5) * res
    disc = (cy[:, None] - y) ** 2 + (cx[None, :] - x) ** 2 <= radius * radius

    observed = np.zeros(disc.shape, dtype=bool)
    a0, a1 = max(i_lo, 0), min(i_hi, ny - 1)
    b0, b1 = max(j_lo, 0), min(j_hi, nx - 1)
    if a0 <= a1 and b0 <= b1:
        observed[a0 - i_lo : a1 - i_lo + 1, b0 - j_lo : b1 - j_lo + 1] = ~np.isnan(
            grid.elevations[a0 : a1 + 1, b0 : b1 + 1]
        )
    bounds = getattr(grid, "bounds", None)
    if bounds is not None:
        wx0, wy0, wx1, wy1 = bounds
        outside = (cy[:, None] < wy0) | (cy[:, None] > wy1) | (cx[None, :] < wx0) | (cx[None, :] > wx1)
        observed |= outside
    area = np.count_nonzero(disc & observed) * res * res
    return min(1.0, area / (math.pi * radius * radius))


def update_candidates(tree: Tree, grid: Grid, params: CostParams, tick: int, radius: float) -> list[Subgoal]:
    """Refresh candidate-target status of tree leaves and return the local set.

    A leaf stays a candidate only while it has never had a child and every
    evaluation so far found coverage at or below ``delta``; losing either
    disqualifies it for good. Nodes outside the window are not evaluated.
    """
    out = []
    for nid in sorted(tree.nodes):
        node = tree[nid]
        if node.disqualified or nid == tree.root_id:
            continue
        if node.children:
            node.disqualified = True
            node.candidate = None
            continue
        if not window_contains(grid, node.position):
            continue
        nabla = coverage_ratio(node.position, grid, radius)
        if nabla > params.delta:
            node.disqualified = True
            node.candidate = None
            continue
        if node.candidate is None:
            node.candidate = Candidate(nabla, tick)
        else:
            node.candidate.nabla_max = max(node.candidate.nabla_max, nabla)
        out.append(
            Subgoal(
                node.position,
                Source.LOCAL,
                nid,
                node.candidate.nabla_max,
                node.cum_length,
                node.cum_gradient,
                node.cum_turn,
            )
        )
    return out


def local_cost(s: Subgoal, group: list[Subgoal], target, params: CostParams) -> float:
    """Normalised length/gradient penalty, damped by turning, plus distance to target.

    Normalisers run over the whole local set ``group``; a zero sum makes its
    term vanish instead of dividing by zero.
    """
    total_len = sum(g.length for g in group)
    total_grad = sum(g.gradient for g in group)
    len_term = s.length / total_len if total_len > 0 else 0.0
    grad_term = s.gradient / total_grad if total_grad > 0 else 0.0
    penalty = (params.w_alpha * len_term + params.w_beta * grad_term) * math.exp(-params.lam * s.turn)
    return penalty + math.dist(s.position, target)


def global_cost(s: Subgoal, target) -> float:
    return math.dist(s.position, target) * math.exp(s.nabla_max)


@dataclass
class Selection:
    subgoal: Subgoal
    source: Source


def select_subgoal(
    local: list[Subgoal],
    global_: list[Subgoal],
    params: CostParams,
    target,
    allow_small_local: bool = False,
) -> Selection:
    """Local set when it holds at least ``n_delta`` subgoals, otherwise the global set.

    With ``allow_small_local`` a non-empty local set below ``n_delta`` is
    still used when the global set is empty. Ties go to the lowest node id.
    """
    if len(local) >= params.n_delta or (allow_small_local and local and not global_):
        for s in local:
            s.cost = local_cost(s, local, target, params)
        pool, source = local, Source.LOCAL
    elif global_:
        for s in global_:
            s.cost = global_cost(s, target)
        pool, source = global_, Source.GLOBAL
    else:
        raise NoSubgoal("no local or global subgoal available")
    best = min(pool, key=lambda s: (s.cost, s.ref))
    return Selection(best, source)
