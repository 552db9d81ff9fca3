"""Uniform bucket grid for incremental planar nearest-neighbour queries."""

from __future__ import annotations

import math
from collections import defaultdict


class SpatialHash:
    """Point set supporting insert/remove, radius and nearest queries.

    Ties are broken by the lowest id so query results never depend on
    insertion history.
    """

    def __init__(self, cell: float):
        if cell <= 0:
            raise ValueError("cell size must be positive")
        self.cell = cell
        self._buckets: dict[tuple[int, int], dict[int, tuple[float, float]]] = defaultdict(dict)
        self._where: dict[int, tuple[int, int]] = {}
        self._bounds: list[int] | None = None

    def __len__(self) -> int:
        return len(self._where)

    def __contains__(self, key: int) -> bool:
        return key in self._where

    def _key(self, x: float, y: float) -> tuple[int, int]:
        return math.floor(x / self.cell), math.floor(y / self.cell)

    def insert(self, key: int, x: float, y: float) -> None:
        if key in self._where:
            self.remove(key)
        b = self._key(x, y)
        self._buckets[b][key] = (x, y)
        self._where[key] = b
        if self._bounds is None:
            self._bounds = [b[0], b[1], b[0], b[1]]
        else:
            bd = self._bounds
            bd[0], bd[1] = min(bd[0], b[0]), min(bd[1], b[1])
            bd[2], bd[3] = max(bd[2], b[0]), max(bd[3], b[1])

    def remove(self, key: int) -> None:
        b = self._where.pop(key)
        bucket = self._buckets[b]
        del bucket[key]
        if not bucket:
            del self._buckets[b]

    def within(self, x: float, y: float, r: float) -> list[int]:
        """Ids within distance ``r`` of ``(x, y)``, ascending."""
        cx0, cy0 = self._key(x - r, y - r)
        cx1, cy1 = self._key(x + r, y + r)
        r2 = r * r
        out = []
        buckets = self._buckets
        for bx in range(cx0, cx1 + 1):
            for by in range(cy0, cy1 + 1):
                bucket = buckets.get((bx, by))
                if not bucket:
                    continue
                for key, (px, py) in bucket.items():
                    if (px - x) ** 2 + (py - y) ** 2 <= r2:
                        out.append(key)
        out.sort()
        return out

    def nearest(self, x: float, y: float) -> int | None:
        """Closest id to ``(x, y)`` (lowest id on ties), None when empty."""
        if not self._where:
            return None
        cx, cy = self._key(x, y)
        bd = self._bounds
        max_ring = max(abs(cx - bd[0]), abs(cx - bd[2]), abs(cy - bd[1]), abs(cy - bd[3])) + 1
        best, best_d2 = None, math.inf
        buckets = self._buckets
        for ring in range(max_ring + 1):
            # every point in ring k is at least (k - 1) cells away
            if best is not None and ((ring - 1) * self.cell) ** 2 > best_d2:
                break
            for bx in range(cx - ring, cx + ring + 1):
                edge_x = bx in (cx - ring, cx + ring)
                ys = range(cy - ring, cy + ring + 1) if edge_x else (cy - ring, cy + ring)
                for by in ys:
                    bucket = buckets.get((bx, by))
                    if not bucket:
                        continue
                    for key, (px, py) in bucket.items():
                        d2 = (px - x) ** 2 + (py - y) ** 2
                        if d2 < best_d2 or (d2 == best_d2 and key < best):
                            best, best_d2 = key, d2
        return best
