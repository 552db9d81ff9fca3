import math

import numpy as np
import pytest

from hapnav.terrain import HeightField, LocalGridMap


def field_from(fn, n=50, res=0.1):
    """HeightField of ``n x n`` cells with ``fn(x, y)`` sampled at cell centers."""
    c = (np.arange(n) + 0.5) * res
    x, y = np.meshgrid(c, c)
    return HeightField(n * res, n * res, res, fn(x, y))


def full_window(field_, hazard=None) -> LocalGridMap:
    """A window covering the whole field with every cell known."""
    ny, nx = field_.shape
    return LocalGridMap(
        window_w=nx,
        window_h=ny,
        resolution=field_.resolution,
        center=((field_.extent[0] + field_.extent[2]) / 2, (field_.extent[1] + field_.extent[3]) / 2),
        origin=field_.origin,
        offset=(0, 0),
        elevations=np.array(field_.elevations, dtype=float),
        hazard=np.zeros((ny, nx), dtype=bool) if hazard is None else hazard,
    )


def oracle_height(elev, res, x, y):
    """Bilinear height from cell centers, written out longhand; None when off-map or unknown."""
    ny, nx = elev.shape
    if not (0.0 <= x <= nx * res and 0.0 <= y <= ny * res):
        return None
    u = min(max(x / res - 0.5, 0.0), nx - 1.0)
    v = min(max(y / res - 0.5, 0.0), ny - 1.0)
    j = min(int(math.floor(u)), nx - 2)
    i = min(int(math.floor(v)), ny - 2)
    fu, fv = u - j, v - i
    total = 0.0
    for di, dj, w in ((0, 0, (1 - fu) * (1 - fv)), (0, 1, fu * (1 - fv)), (1, 0, (1 - fu) * fv), (1, 1, fu * fv)):
        if w > 0:
            h = elev[i + di, j + dj]
            if math.isnan(h):
                return None
            total += w * h
    return total


def oracle_verdict(elev, res, p, q, alpha, beta, meta_len):
    """Independent meta-segment evaluation: 'feasible', 'slope', 'flatness' or 'unknown'."""
    length = math.hypot(q[0] - p[0], q[1] - p[1])
    if length == 0:
        return "feasible"
    n = max(1, math.ceil(length / meta_len - 1e-9))
    heights = []
    for k in range(n + 1):
        t = k / n
        heights.append(oracle_height(elev, res, p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    step = length / n
    slopes = []
    unknown = False
    for a, b in zip(heights, heights[1:]):
        if a is None or b is None:
            unknown = True
        else:
            slopes.append(abs(b - a) / step)
    if any(s > alpha for s in slopes):
        return "slope"
    if sum(slopes) > beta:
        return "flatness"
    return "unknown" if unknown else "feasible"


def corridor_exists(field_, start, goal, alpha, step_cells=2):
    """Grid search over cell centers joined by short moves whose endpoint slope is <= alpha.

    Moves connect cells ``step_cells`` apart (8 directions). Every move is also
    checked at one-cell spacing along its length, so the returned verdict
    certifies a chain of gentle segments, not just gentle endpoints.
    """
    from collections import deque

    elev = np.asarray(field_.elevations)
    res = field_.resolution
    ny, nx = elev.shape

    def cell(p):
        return min(int(p[1] / res), ny - 1), min(int(p[0] / res), nx - 1)

    def ok(a, b):
        (i0, j0), (i1, j1) = a, b
        steps = max(abs(i1 - i0), abs(j1 - j0))
        prev = elev[i0, j0]
        for k in range(1, steps + 1):
            i = i0 + (i1 - i0) * k // steps
            j = j0 + (j1 - j0) * k // steps
            d = res * math.hypot((i1 - i0) / steps, (j1 - j0) / steps)
            if abs(elev[i, j] - prev) / d > alpha:
                return False
            prev = elev[i, j]
        return True

    s, g = cell(start), cell(goal)
    seen = {s}
    queue = deque([s])
    moves = [(di, dj) for di in (-step_cells, 0, step_cells) for dj in (-step_cells, 0, step_cells) if di or dj]
    while queue:
        cur = queue.popleft()
        if max(abs(cur[0] - g[0]), abs(cur[1] - g[1])) <= step_cells:
            return True
        for di, dj in moves:
            nxt = (cur[0] + di, cur[1] + dj)
            if 0 <= nxt[0] < ny and 0 <= nxt[1] < nx and nxt not in seen and ok(cur, nxt):
                seen.add(nxt)
                queue.append(nxt)
    return False


@pytest.fixture
def flat_field():
    return field_from(lambda x, y: np.zeros_like(x))
