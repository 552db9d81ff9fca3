"""Hazard-aware windowed RRT navigation over 2.5D terrain with a persistent roadmap."""

from .navigator import EpisodeConfig, EpisodeMetrics, Mode, Navigator, run_episode
from .terrain import HeightField, TerrainKind, TerrainSpec, generate_terrain

__all__ = [
    "EpisodeConfig",
    "EpisodeMetrics",
    "HeightField",
    "Mode",
    "Navigator",
    "TerrainKind",
    "TerrainSpec",
    "generate_terrain",
    "run_episode",
]
