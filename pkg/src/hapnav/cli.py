"""Command-line front end: run, compare, sweep, export-terrain.

Exit codes: 0 success, 1 usage or configuration error, 2 planner failure.
Every output file is written to a temp file and renamed into place.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, fields, replace
from pathlib import Path

from . import config as cfgmod
from .global_graph import graph_snapshot
from .hd_rrt import tree_snapshot
from .navigator import Decision, EpisodeConfig, EpisodeMetrics, Mode, Navigator, TrajectoryRow
from .terrain import atomic_write, generate_terrain, save_heightmap

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2

TRAJECTORY_COLUMNS = [f.name for f in fields(TrajectoryRow)]
DECISION_COLUMNS = [f.name for f in fields(Decision)]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def parse_seeds(text: str) -> list[int]:
    """``"0,3,5-7"`` -> ``[0, 3, 5, 6, 7]``; seeds are non-negative."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, _, hi = part.partition("-")
        lo = int(lo)
        hi = int(hi) if hi else lo
        if lo < 0 or hi < lo:
            raise ValueError(f"bad seed range {part!r}")
        seeds.extend(range(lo, hi + 1))
    return seeds


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _kv(record: dict) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in record.items())


def _episode(cfg: EpisodeConfig) -> EpisodeMetrics:
    return Navigator(cfg).run()


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _write_episode(d: Path, m: EpisodeMetrics, decisions: bool = True) -> None:
    d.mkdir(parents=True, exist_ok=True)
    atomic_write(d / "trajectory.csv", _csv(TRAJECTORY_COLUMNS, (astuple(r) for r in m.trajectory)))
    if decisions:
        atomic_write(d / "decisions.csv", _csv(DECISION_COLUMNS, (astuple(x) for x in m.decisions)))
    atomic_write(d / "summary.txt", _kv(m.summary()))


def _seeded(cfg: EpisodeConfig, seed: int, **changes) -> EpisodeConfig:
    """Same config with one seed driving both terrain and sampling."""
    return replace(cfg, terrain=replace(cfg.terrain, seed=seed), seed=seed, **changes)


# -- subcommands -------------------------------------------------------------


def cmd_run(cfg: EpisodeConfig, values: dict, out: Path, seeds, jobs: int) -> int:
    if seeds:
        if len(seeds) != 1:
            raise UsageError("run takes exactly one seed")
        cfg = _seeded(cfg, seeds[0])
    every = values["output.snapshot_every"]
    snaps = out / "snapshots"
    nav = Navigator(cfg)
    if every:
        snaps.mkdir(exist_ok=True)
    while not nav.done:
        nav.step()
        if every and nav.tick % every == 0:
            atomic_write(snaps / f"tree_t{nav.tick:05d}.txt", tree_snapshot(nav.tree))
            atomic_write(snaps / f"graph_t{nav.tick:05d}.txt", graph_snapshot(nav.graph))
    m = nav.finalize()
    atomic_write(out / "tree_final.txt", tree_snapshot(nav.tree))
    atomic_write(out / "graph_final.txt", graph_snapshot(nav.graph))
    _write_episode(out, m, values["output.decisions"])
    print(f"{m.status}: {m.ticks} ticks, path {m.path_length:.2f} m, roughness {m.roughness:.4f}")
    return EXIT_OK if m.success else EXIT_FAILURE


def cmd_compare(cfg: EpisodeConfig, values: dict, out: Path, seeds, jobs: int) -> int:
    seeds = seeds if seeds is not None else [cfg.seed]
    if not seeds:
        raise UsageError("compare needs at least one seed")
    tasks = [_seeded(cfg, s, mode=mode) for s in seeds for mode in (Mode.PRUNED, Mode.FULL_TREE)]
    results = _map(_episode, tasks, jobs)
    rows, series = [], []
    for k, s in enumerate(seeds):
        p, f = results[2 * k], results[2 * k + 1]
        _write_episode(out / "episodes" / f"seed{s}_pruned", p, values["output.decisions"])
        _write_episode(out / "episodes" / f"seed{s}_full_tree", f, values["output.decisions"])
        rows.append(
            (
                s,
                p.peak_node_count,
                f.peak_node_count,
                p.node_counts[-1],
                f.node_counts[-1],
                p.final_memory,
                f.final_memory,
                p.success,
                f.success,
            )
        )
        for t in range(max(len(p.node_counts), len(f.node_counts))):
            pc = p.node_counts[t] if t < len(p.node_counts) else ""
            fc = f.node_counts[t] if t < len(f.node_counts) else ""
            series.append((s, t, pc, fc))
    atomic_write(
        out / "compare_summary.csv",
        _csv(
            [
                "seed",
                "pruned_peak",
                "full_tree_peak",
                "pruned_final",
                "full_tree_final",
                "pruned_memory_bytes",
                "full_tree_memory_bytes",
                "pruned_success",
                "full_tree_success",
            ],
            rows,
        ),
    )
    atomic_write(out / "compare_nodes.csv", _csv(["seed", "tick", "pruned", "full_tree"], series))
    for r in rows:
        print(f"seed {r[0]}: peak nodes pruned {r[1]} full_tree {r[2]}, memory {r[5]} vs {r[6]} bytes")
    return EXIT_OK if all(m.success for m in results) else EXIT_FAILURE


def cmd_sweep(cfg: EpisodeConfig, values: dict, out: Path, seeds, jobs: int) -> int:
    seeds = seeds if seeds is not None else [cfg.seed]
    if not seeds:
        raise UsageError("sweep needs at least one seed")
    pairs = values["sweep.pairs"] or [(tuple(cfg.start), tuple(cfg.target))]
    tasks = [_seeded(cfg, s, start=a, target=b) for s in seeds for a, b in pairs]
    for t in tasks:
        t.validate()
    results = _map(_episode, tasks, jobs)
    rows = []
    for k, (t, m) in enumerate(zip(tasks, results)):
        _write_episode(out / "episodes" / f"seed{t.seed}_pair{k % len(pairs)}", m, values["output.decisions"])
        rows.append(
            (t.seed, t.start[0], t.start[1], t.target[0], t.target[1], m.success, m.status, m.ticks, m.path_length, m.roughness)
        )
    atomic_write(
        out / "sweep_runs.csv",
        _csv(
            ["seed", "start_x", "start_y", "target_x", "target_y", "success", "status", "ticks", "path_length", "roughness"],
            rows,
        ),
    )
    wins = [m for m in results if m.success]
    agg = {
        "episodes": len(results),
        "successes": len(wins),
        "success_rate": len(wins) / len(results),
        # means over successful episodes; nan when none succeeded
        "mean_path_length": statistics.fmean(m.path_length for m in wins) if wins else math.nan,
        "mean_roughness": statistics.fmean(m.roughness for m in wins) if wins else math.nan,
    }
    atomic_write(out / "sweep_summary.txt", _kv(agg))
    print(f"{agg['successes']}/{agg['episodes']} succeeded")
    return EXIT_OK if len(wins) == len(results) else EXIT_FAILURE


def cmd_export_terrain(cfg: EpisodeConfig, values: dict, out: Path, seeds, jobs: int) -> int:
    if not seeds:
        save_heightmap(generate_terrain(cfg.terrain), out / "terrain.txt")
        return EXIT_OK
    for s in seeds:
        save_heightmap(generate_terrain(replace(cfg.terrain, seed=s)), out / f"terrain_seed{s}.txt")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "export-terrain": cmd_export_terrain,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hapnav", description="Hazard-aware windowed RRT navigation on synthetic terrain.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "run": "one episode with trajectory, summary and snapshots",
        "compare": "pruned tree against the full-tree baseline on paired seeds",
        "sweep": "terrain seeds crossed with start/goal pairs",
        "export-terrain": "write the configured terrain as a heightmap file",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seeds", help="seed list such as 0,1,4-6")
        p.add_argument("--jobs", type=int, default=1, help="parallel episodes (default: 1)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        seeds = parse_seeds(args.seeds) if args.seeds is not None else None
        values = cfgmod.load(args.config, args.set)
        cfg = cfgmod.build_episode(values)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, values, out, seeds, args.jobs)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help exits 0 through argparse
        return EXIT_OK if not exc.code else EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
