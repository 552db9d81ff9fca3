"""Flat ``key = value`` configuration with dotted section keys.

Every tunable lives in :data:`PARAMS` together with its default and a short
rationale. Unknown keys and bad values raise :class:`ConfigError` naming the
key, so the command line can report exactly what to fix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .hd_rrt import FeasibilityParams
from .navigator import EpisodeConfig, Mode
from .subgoals import CostParams
from .terrain import TerrainKind, TerrainSpec


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


Point = tuple[float, float]


def _point(text: str) -> Point:
    parts = [p for p in text.replace(",", " ").split()]
    if len(parts) != 2:
        raise ValueError(f"expected 'x, y', got {text!r}")
    return float(parts[0]), float(parts[1])


def _pairs(text: str) -> list[tuple[Point, Point]]:
    """``x,y -> x,y; x,y -> x,y`` start/goal list."""
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "->" not in chunk:
            raise ValueError(f"expected 'x,y -> x,y', got {chunk!r}")
        a, b = chunk.split("->", 1)
        out.append((_point(a), _point(b)))
    return out


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _positive(v):
    return v is None or v > 0


def _nonneg(v):
    return v >= 0


def _at_least_one(v):
    return v >= 1


@dataclass(frozen=True)
class Param:
    default: Any
    parse: Callable[[str], Any]
    check: Callable[[Any], bool] | None = None
    requirement: str = ""
    note: str = ""


PARAMS: dict[str, Param] = {
    "terrain.kind": Param("hilly", lambda s: TerrainKind(s.strip()).value, None, "", "hilly | forest | imported"),
    "terrain.seed": Param(0, int, None, "", "noise seed; sweeps and compares override it"),
    "terrain.width": Param(32.0, float, _positive, "must be positive", "meters, a desk-scale outdoor scene"),
    "terrain.height": Param(32.0, float, _positive, "must be positive", "meters"),
    "terrain.resolution": Param(0.2, float, _positive, "must be positive", "meters per cell, typical of 2.5D mapping"),
    "terrain.amplitude": Param(2.424, float, _nonneg, "must be >= 0", "peak-to-trough height in meters"),
    "terrain.base_height": Param(0.549, float, None, "", "lowest elevation in meters"),
    "terrain.feature_scale": Param(8.0, float, _positive, "must be positive", "hill wavelength in meters"),
    "terrain.obstacle_count": Param(0, int, _nonneg, "must be >= 0", "plateaus (hilly) or trunks (forest)"),
    "terrain.obstacle_height": Param(2.0, float, None, "", "meters added before normalisation"),
    "terrain.obstacle_size": Param(3.0, float, _positive, "must be positive", "meters"),
    "terrain.path": Param(None, str, None, "", "heightmap file for imported terrain"),
    "episode.start": Param((3.0, 3.0), _point, None, "", "world meters"),
    "episode.target": Param((29.0, 29.0), _point, None, "", "world meters"),
    "episode.seed": Param(0, int, None, "", "planner sampling seed"),
    "episode.mode": Param("pruned", lambda s: Mode(s.strip()).value, None, "", "pruned | full_tree"),
    "episode.max_ticks": Param(600, int, _at_least_one, "must be >= 1", "tick budget"),
    "episode.patience": Param(20, int, _at_least_one, "must be >= 1", "idle ticks without a subgoal before failing"),
    "window.width": Param(40, int, lambda v: v >= 2, "must be >= 2", "cells; 8 m at the default resolution"),
    "window.height": Param(40, int, lambda v: v >= 2, "must be >= 2", "cells"),
    "sensing.radius": Param(6.0, float, _positive, "must be positive", "meters; covers the whole default window"),
    "tree.r_ext": Param(1.5, float, _positive, "must be positive", "steer radius and coverage disc radius"),
    "tree.extends_per_cycle": Param(60, int, _at_least_one, "must be >= 1", "sampling attempts per tick"),
    "tree.n_s": Param(3, int, lambda v: 1 <= v <= 8, "must lie in 1..8", "blocked sectors that saturate a node"),
    "tree.rebase_threshold": Param(None, _optional_float, _positive, "must be positive", "meters; auto = r_ext"),
    "feasibility.alpha_grad": Param(
        math.tan(math.radians(30)), float, _positive, "must be positive", "tan 30 deg climbing limit"
    ),
    "feasibility.beta_flat": Param(2.0, float, _positive, "must be positive", "summed |slope| budget per edge"),
    "feasibility.meta_len": Param(0.2, float, _positive, "must be positive", "meters, one cell; at most two cells"),
    "cost.w_alpha": Param(1.0, float, _nonneg, "must be >= 0", "length weight"),
    "cost.w_beta": Param(1.0, float, _nonneg, "must be >= 0", "gradient weight"),
    "cost.lambda": Param(0.5, float, _nonneg, "must be >= 0", "turning damping"),
    "cost.delta": Param(0.6, float, lambda v: 0 < v <= 1, "must lie in (0, 1]", "coverage threshold"),
    "cost.n_delta": Param(3, int, _at_least_one, "must be >= 1", "local candidates needed to stay local"),
    "cost.reach_eps": Param(0.3, float, _positive, "must be positive", "meters"),
    "graph.k_nn": Param(5, int, _at_least_one, "must be >= 1", "neighbours tried per new graph node"),
    "robot.speed": Param(0.5, float, _positive, "must be positive", "meters per tick"),
    "sweep.pairs": Param(None, _pairs, None, "", "'x,y -> x,y; ...'; empty = episode start/target"),
    "output.snapshot_every": Param(0, int, _nonneg, "must be >= 0", "ticks between tree/graph snapshots; 0 = final only"),
    "output.decisions": Param(True, _bool, None, "", "also write decisions.csv for run"),
}


def parse_value(key: str, text: str):
    if key not in PARAMS:
        raise ConfigError(key, "unknown key")
    p = PARAMS[key]
    if p.default is None and not text.strip():
        return None
    try:
        value = p.parse(text.strip())
    except ValueError as exc:
        raise ConfigError(key, f"bad value {text.strip()!r} ({exc})") from None
    if p.check is not None and value is not None and not p.check(value):
        raise ConfigError(key, f"{p.requirement}, got {text.strip()}")
    return value


def parse_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = parse_value(key, value)
    return values


def load(path: str | Path | None = None, overrides: list[str] = ()) -> dict[str, Any]:
    """Defaults, then the config file, then ``key=value`` overrides."""
    values = {k: p.default for k, p in PARAMS.items()}
    if path is not None:
        values.update(parse_text(Path(path).read_text(), str(path)))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, value = item.split("=", 1)
        values[key.strip()] = parse_value(key.strip(), value)
    return values


def build_episode(values: dict[str, Any]) -> EpisodeConfig:
    terrain = TerrainSpec(
        kind=TerrainKind(values["terrain.kind"]),
        seed=values["terrain.seed"],
        width=values["terrain.width"],
        height=values["terrain.height"],
        resolution=values["terrain.resolution"],
        amplitude=values["terrain.amplitude"],
        base_height=values["terrain.base_height"],
        feature_scale=values["terrain.feature_scale"],
        obstacle_count=values["terrain.obstacle_count"],
        obstacle_height=values["terrain.obstacle_height"],
        obstacle_size=values["terrain.obstacle_size"],
        path=values["terrain.path"],
    )
    if terrain.kind is TerrainKind.IMPORTED and not terrain.path:
        raise ConfigError("terrain.path", "required when terrain.kind = imported")
    cfg = EpisodeConfig(
        terrain=terrain,
        start=values["episode.start"],
        target=values["episode.target"],
        window_w=values["window.width"],
        window_h=values["window.height"],
        sensing_radius=values["sensing.radius"],
        r_ext=values["tree.r_ext"],
        feasibility=FeasibilityParams(
            alpha_grad=values["feasibility.alpha_grad"],
            beta_flat=values["feasibility.beta_flat"],
            meta_len=values["feasibility.meta_len"],
        ),
        cost=CostParams(
            w_alpha=values["cost.w_alpha"],
            w_beta=values["cost.w_beta"],
            lam=values["cost.lambda"],
            delta=values["cost.delta"],
            n_delta=values["cost.n_delta"],
            reach_eps=values["cost.reach_eps"],
        ),
        n_s=values["tree.n_s"],
        extends_per_cycle=values["tree.extends_per_cycle"],
        speed=values["robot.speed"],
        max_ticks=values["episode.max_ticks"],
        seed=values["episode.seed"],
        mode=Mode(values["episode.mode"]),
        rebase_threshold=values["tree.rebase_threshold"],
        k_nn=values["graph.k_nn"],
        patience=values["episode.patience"],
    )
    if tuple(cfg.start) == tuple(cfg.target):
        raise ConfigError("episode.target", "coincides with episode.start")
    if cfg.terrain.kind is not TerrainKind.IMPORTED:
        try:
            cfg.feasibility.validate(cfg.terrain.resolution)
        except ValueError as exc:
            raise ConfigError("feasibility.meta_len", str(exc)) from None
    return cfg


def render(values: dict[str, Any]) -> str:
    """Config text that parses back to ``values``."""
    lines = []
    for key in PARAMS:
        v = values[key]
        if v is None:
            text = ""
        elif key == "sweep.pairs":
            text = "; ".join(f"{a[0]!r},{a[1]!r} -> {b[0]!r},{b[1]!r}" for a, b in v)
        elif isinstance(v, tuple):
            text = f"{v[0]!r}, {v[1]!r}"
        elif isinstance(v, bool):
            text = "true" if v else "false"
        else:
            text = repr(v) if isinstance(v, float) else str(v)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
