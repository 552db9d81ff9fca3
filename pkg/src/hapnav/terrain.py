"""Ground-truth terrain, synthetic world generation and windowed sensing.

All grids share one convention: ``elevations[i, j]`` is the cell whose
lower-left corner sits at ``origin + (j * resolution, i * resolution)``;
rows run along +y, columns along +x. Unknown elevation is stored as NaN.
"""

from __future__ import annotations

import enum
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class Grid:
    """Shared geometry for every cell-aligned elevation grid."""

    origin: tuple[float, float]
    resolution: float
    elevations: np.ndarray
    hazard: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.elevations.shape

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) in world meters."""
        ny, nx = self.elevations.shape
        x0, y0 = self.origin
        return x0, y0, x0 + nx * self.resolution, y0 + ny * self.resolution

    def contains(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.extent
        return x0 <= x <= x1 and y0 <= y <= y1

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """Row/column of the cell containing ``(x, y)``; may be out of range."""
        ny, nx = self.elevations.shape
        i = math.floor((y - self.origin[1]) / self.resolution)
        j = math.floor((x - self.origin[0]) / self.resolution)
        # points on the far edge belong to the last cell
        if i == ny and y <= self.extent[3]:
            i = ny - 1
        if j == nx and x <= self.extent[2]:
            j = nx - 1
        return i, j

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (
            self.origin[0] + (j + 0.5) * self.resolution,
            self.origin[1] + (i + 0.5) * self.resolution,
        )

    def known(self) -> np.ndarray:
        return ~np.isnan(self.elevations)


@dataclass(eq=False)
class HeightField(Grid):
    """Immutable ground-truth terrain owned by the simulator."""

    width_m: float
    height_m: float
    resolution: float
    elevations: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (self.width_m > 0 and self.height_m > 0 and self.resolution > 0):
            raise ValueError("width_m, height_m and resolution must be positive")
        expected = (
            round(self.height_m / self.resolution),
            round(self.width_m / self.resolution),
        )
        arr = np.array(self.elevations, dtype=float)
        if arr.shape != expected:
            raise ValueError(f"elevation array shape {arr.shape} != {expected}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("elevations must be finite")
        arr.setflags(write=False)
        self.elevations = arr
        self.origin = (float(self.origin[0]), float(self.origin[1]))


@dataclass(eq=False)
class LocalGridMap(Grid):
    """Robot-centered W x H window of sensed elevation plus hazard overlay.

    ``offset`` is the (row, col) of window cell (0, 0) in the world grid,
    which keeps window cells aligned with ground-truth cells.
    """

    window_w: int
    window_h: int
    resolution: float
    center: tuple[float, float]
    origin: tuple[float, float]
    offset: tuple[int, int]
    elevations: np.ndarray
    hazard: np.ndarray
    # extent of the world; cells beyond it can never be explored
    bounds: tuple[float, float, float, float] | None = None

    @property
    def cell_count(self) -> int:
        return self.elevations.size

    def absorb_hazard(self, layer) -> None:
        """Re-project a world hazard layer onto this window."""
        self.hazard = _project(layer.flags, self.offset, self.shape, False) & self.known()


@dataclass(eq=False)
class KnownTerrain(Grid):
    """World-sized record of every cell ever sensed.

    ``hazard`` is shared by reference with the episode's hazard layer.
    """

    resolution: float
    origin: tuple[float, float]
    elevations: np.ndarray
    hazard: np.ndarray | None = None

    @classmethod
    def empty_like(cls, field_: HeightField, hazard: np.ndarray | None = None) -> "KnownTerrain":
        return cls(
            resolution=field_.resolution,
            origin=field_.origin,
            elevations=np.full(field_.shape, np.nan),
            hazard=hazard,
        )

    def absorb(self, local: LocalGridMap) -> None:
        i0, j0 = local.offset
        ny, nx = self.shape
        h, w = local.shape
        ri0, rj0 = max(i0, 0), max(j0, 0)
        ri1, rj1 = min(i0 + h, ny), min(j0 + w, nx)
        if ri0 >= ri1 or rj0 >= rj1:
            return
        src = local.elevations[ri0 - i0 : ri1 - i0, rj0 - j0 : rj1 - j0]
        dst = self.elevations[ri0:ri1, rj0:rj1]
        mask = ~np.isnan(src)
        dst[mask] = src[mask]


class TerrainKind(str, enum.Enum):
    HILLY = "hilly"
    FOREST = "forest"
    IMPORTED = "imported"


@dataclass
class TerrainSpec:
    kind: TerrainKind = TerrainKind.HILLY
    seed: int = 0
    width: float = 32.0
    height: float = 32.0
    resolution: float = 0.2
    amplitude: float = 2.424
    base_height: float = 0.549
    feature_scale: float = 8.0
    # hilly: vertical-walled plateaus; forest: trunks
    obstacle_count: int = 0
    obstacle_height: float = 2.0
    obstacle_size: float = 3.0
    path: str | None = None

    def validate(self) -> None:
        if self.kind is TerrainKind.IMPORTED:
            if not self.path:
                raise ValueError("imported terrain needs a path")
            return
        if self.width <= 0 or self.height <= 0:
            raise ValueError("terrain area must be positive")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.feature_scale <= 0:
            raise ValueError("feature_scale must be positive")
        if self.obstacle_count < 0:
            raise ValueError("obstacle_count must be >= 0")


def _value_noise(rng: np.random.Generator, xs: np.ndarray, ys: np.ndarray, scale: float) -> np.ndarray:
    """Smoothstep-interpolated lattice noise sampled at the grid ``xs`` x ``ys``."""
    nx = int(math.ceil(xs[-1] / scale)) + 2
    ny = int(math.ceil(ys[-1] / scale)) + 2
    lattice = rng.random((ny, nx))
    u = xs / scale
    v = ys / scale
    j0 = np.floor(u).astype(int)
    i0 = np.floor(v).astype(int)
    tu = u - j0
    tv = v - i0
    su = tu * tu * (3 - 2 * tu)
    sv = tv * tv * (3 - 2 * tv)
    a = lattice[np.ix_(i0, j0)]
    b = lattice[np.ix_(i0, j0 + 1)]
    c = lattice[np.ix_(i0 + 1, j0)]
    d = lattice[np.ix_(i0 + 1, j0 + 1)]
    su = su[None, :]
    sv = sv[:, None]
    return (a * (1 - su) + b * su) * (1 - sv) + (c * (1 - su) + d * su) * sv


def generate_terrain(spec: TerrainSpec) -> HeightField:
    """Build a deterministic synthetic world for ``spec``.

    Elevations always span exactly ``[base_height, base_height + amplitude]``
    (a single value when amplitude is zero).
    """
    spec.validate()
    if spec.kind is TerrainKind.IMPORTED:
        return load_heightmap(spec.path)

    rng = np.random.default_rng(spec.seed)
    nx = round(spec.width / spec.resolution)
    ny = round(spec.height / spec.resolution)
    xs = (np.arange(nx) + 0.5) * spec.resolution
    ys = (np.arange(ny) + 0.5) * spec.resolution

    if spec.kind is TerrainKind.HILLY:
        h = _value_noise(rng, xs, ys, spec.feature_scale)
        h = h + 0.5 * _value_noise(rng, xs, ys, spec.feature_scale / 2)
        h = h * spec.amplitude
        for _ in range(spec.obstacle_count):
            w, d = rng.uniform(0.5, 1.0, size=2) * spec.obstacle_size
            cx = rng.uniform(0, spec.width)
            cy = rng.uniform(0, spec.height)
            mask = (np.abs(ys[:, None] - cy) <= d / 2) & (np.abs(xs[None, :] - cx) <= w / 2)
            h[mask] += spec.obstacle_height
    else:
        h = _value_noise(rng, xs, ys, spec.feature_scale) * spec.amplitude
        for _ in range(spec.obstacle_count):
            cx = rng.uniform(0, spec.width)
            cy = rng.uniform(0, spec.height)
            r = 0.15 * spec.obstacle_size
            mask = (ys[:, None] - cy) ** 2 + (xs[None, :] - cx) ** 2 <= r * r
            h[mask] += spec.obstacle_height

    lo, hi = float(h.min()), float(h.max())
    if spec.amplitude == 0 or hi == lo:
        elev = np.full((ny, nx), float(spec.base_height))
    else:
        elev = spec.base_height + spec.amplitude * (h - lo) / (hi - lo)
    return HeightField(spec.width, spec.height, spec.resolution, elev)


_SMALL = 32


def _bilinear(grid: Grid, x: float, y: float) -> float:
    """Scalar twin of :func:`elevations_at`, same arithmetic in the same order."""
    elev = grid.elevations
    ny, nx = elev.shape
    x0, y0, x1, y1 = grid.extent
    if not (x0 <= x <= x1 and y0 <= y <= y1):
        return math.nan
    res = grid.resolution
    u = min(max((x - x0) / res - 0.5, 0.0), nx - 1)
    v = min(max((y - y0) / res - 0.5, 0.0), ny - 1)
    j0 = min(math.floor(u), max(nx - 2, 0))
    i0 = min(math.floor(v), max(ny - 2, 0))
    j1 = min(j0 + 1, nx - 1)
    i1 = min(i0 + 1, ny - 1)
    tu = u - j0
    tv = v - i0
    out = 0.0
    for i, j, w in (
        (i0, j0, (1 - tu) * (1 - tv)),
        (i0, j1, tu * (1 - tv)),
        (i1, j0, (1 - tu) * tv),
        (i1, j1, tu * tv),
    ):
        out = out + (w * elev.item(i, j) if w > 0 else 0.0)
    return out


def elevations_at(grid: Grid, xs, ys) -> np.ndarray:
    """Vectorised bilinear lookup over cell centers; NaN marks Unknown.

    A cell only contributes when its interpolation weight is nonzero, so a
    query exactly on a cell center returns that cell's value. Points inside
    the map but beyond the outermost cell centers are clamped to them.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape == ys.shape and xs.ndim == 1 and len(xs) <= _SMALL:
        # per-call numpy overhead dominates for short segments
        return np.array([_bilinear(grid, x, y) for x, y in zip(xs.tolist(), ys.tolist())])
    elev = grid.elevations
    ny, nx = elev.shape
    x0, y0, x1, y1 = grid.extent
    res = grid.resolution
    inside = (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)

    u = np.clip((xs - x0) / res - 0.5, 0.0, nx - 1)
    v = np.clip((ys - y0) / res - 0.5, 0.0, ny - 1)
    j0 = np.minimum(np.floor(u).astype(int), max(nx - 2, 0))
    i0 = np.minimum(np.floor(v).astype(int), max(ny - 2, 0))
    j1 = np.minimum(j0 + 1, nx - 1)
    i1 = np.minimum(i0 + 1, ny - 1)
    tu = u - j0
    tv = v - i0

    ii = np.stack((i0, i0, i1, i1))
    jj = np.stack((j0, j1, j0, j1))
    w = np.stack(((1 - tu) * (1 - tv), tu * (1 - tv), (1 - tu) * tv, tu * tv))
    # zero-weight neighbours must not leak NaN into the sum
    out = np.where(w > 0, w * elev[ii, jj], 0.0).sum(axis=0)
    return np.where(inside, out, np.nan)


def elevation_at(grid: Grid, x: float, y: float) -> float | None:
    """Bilinear elevation at ``(x, y)``, or None when Unknown."""
    h = float(elevations_at(grid, x, y))
    return None if math.isnan(h) else h


def _project(world: np.ndarray, offset: tuple[int, int], shape: tuple[int, int], fill) -> np.ndarray:
    """Cut a window of ``shape`` at ``offset`` out of a world array, padding with ``fill``."""
    out = np.full(shape, fill, dtype=world.dtype)
    i0, j0 = offset
    h, w = shape
    ny, nx = world.shape
    ri0, rj0 = max(i0, 0), max(j0, 0)
    ri1, rj1 = min(i0 + h, ny), min(j0 + w, nx)
    if ri0 < ri1 and rj0 < rj1:
        out[ri0 - i0 : ri1 - i0, rj0 - j0 : rj1 - j0] = world[ri0:ri1, rj0:rj1]
    return out


def sense(
    field_: HeightField,
    robot: tuple[float, float],
    prior: LocalGridMap | None = None,
    *,
    window: tuple[int, int] | None = None,
    radius: float | None = None,
    hazard_layer=None,
) -> LocalGridMap:
    """Ground-truth stand-in for the elevation-mapping front end.

    Cells whose centers lie within ``radius`` of the robot are read from the
    field. Elevations and hazard flags known in ``prior`` are carried over for
    cells that stay inside the window; flags from ``hazard_layer`` are added.
    """
    x, y = robot
    if not field_.contains(x, y):
        raise ValueError(f"robot position {robot} outside terrain bounds")
    if window is None:
        if prior is None:
            raise ValueError("window size needed when there is no prior map")
        window = (prior.window_w, prior.window_h)
    if radius is None:
        radius = math.inf
    w, h = window
    res = field_.resolution
    ri, rj = field_.cell_of(x, y)
    i0, j0 = ri - h // 2, rj - w // 2
    origin = (field_.origin[0] + j0 * res, field_.origin[1] + i0 * res)

    elev = _project(field_.elevations, (i0, j0), (h, w), np.nan)
    cy = origin[1] + (np.arange(h) + 0.5) * res
    cx = origin[0] + (np.arange(w) + 0.5) * res
    in_range = (cy[:, None] - y) ** 2 + (cx[None, :] - x) ** 2 <= radius * radius
    elev = np.where(in_range, elev, np.nan)
    hazard = np.zeros((h, w), dtype=bool)

    if prior is not None:
        di, dj = prior.offset[0] - i0, prior.offset[1] - j0
        ph, pw = prior.shape
        a0, b0 = max(di, 0), max(dj, 0)
        a1, b1 = min(di + ph, h), min(dj + pw, w)
        if a0 < a1 and b0 < b1:
            old = prior.elevations[a0 - di : a1 - di, b0 - dj : b1 - dj]
            cur = elev[a0:a1, b0:b1]
            fill = np.isnan(cur) & ~np.isnan(old)
            cur[fill] = old[fill]
            hazard[a0:a1, b0:b1] |= prior.hazard[a0 - di : a1 - di, b0 - dj : b1 - dj]
    if hazard_layer is not None:
        hazard |= _project(hazard_layer.flags, (i0, j0), (h, w), False)
    hazard &= ~np.isnan(elev)

    return LocalGridMap(
        window_w=w,
        window_h=h,
        resolution=res,
        center=(float(x), float(y)),
        origin=origin,
        offset=(i0, j0),
        elevations=elev,
        hazard=hazard,
        bounds=field_.extent,
    )


def save_heightmap(field_: HeightField, path) -> None:
    """Write ``W H resolution`` then row-major elevations with 9 significant digits."""
    ny, nx = field_.shape
    lines = [f"{nx} {ny} {field_.resolution!r}"]
    for row in field_.elevations:
        lines.append(" ".join(format(float(v), ".9g") for v in row))
    atomic_write(path, "\n".join(lines) + "\n")


def load_heightmap(path) -> HeightField:
    tokens = Path(path).read_text().split()
    if len(tokens) < 3:
        raise ValueError(f"{path}: missing header")
    nx, ny, res = int(tokens[0]), int(tokens[1]), float(tokens[2])
    values = tokens[3:]
    if len(values) != nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} elevations, found {len(values)}")
    elev = np.array([float(v) for v in values]).reshape(ny, nx)
    return HeightField(nx * res, ny * res, res, elev)


def atomic_write(path, text: str) -> None:
    """Write via a temp file in the same directory and rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
