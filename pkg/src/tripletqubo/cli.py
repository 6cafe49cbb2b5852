"""Command line interface.

Verbs: ``run`` (full pipeline), ``scan`` (multiplicity scan), ``gen``
(synthetic event to CSV), ``solve`` (QUBO file to result JSON) and ``score``
(doublets CSV plus truth to metrics JSON).

Settings resolve as defaults, then ``--config`` YAML, then flags.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import yaml

from .events import DetectorGeometry, generate_synthetic_event, load_event, write_event
from .pipeline import SOLVERS, PipelineConfig, PipelineError, run_multiplicity_scan, run_pipeline, solve_qubo
from .postmetrics import TrackCandidate, UndefinedMetricError, build_track_candidates, evaluate
from .qubo import parse_qubo_file
from .seeding import Doublet

log = logging.getLogger("tripletqubo")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNDEFINED = 2

# flag -> (config section or None for top level, field, type)
_FLAGS = {
    "particles": ("synthetic", "n_particles", int),
    "noise": ("synthetic", "noise_fraction", float),
    "pt_min": ("synthetic", "pt_min", float),
    "pt_max": ("synthetic", "pt_max", float),
    "event_seed": ("synthetic", "seed", int),
    "max_layer_gap": ("seeding", "max_layer_gap", int),
    "max_abs_dzdr": ("seeding", "max_abs_dzdr", float),
    "max_r_gap": ("seeding", "max_r_gap", float),
    "seed_min_pt": ("seeding", "min_pt", float),
    "max_abs_z0": ("seeding", "max_abs_z0", float),
    "max_holes": ("triplet_cuts", "max_holes", int),
    "max_abs_qpt": ("triplet_cuts", "max_abs_qpt", float),
    "max_delta_theta": ("triplet_cuts", "max_delta_theta", float),
    "max_qpt_diff": ("triplet_cuts", "max_qpt_diff", float),
    "min_strength": ("triplet_cuts", "min_strength", float),
    "z1": ("strength", "z1", float),
    "z2": ("strength", "z2", float),
    "z3": ("strength", "z3", float),
    "z4": ("strength", "z4", float),
    "z5": ("strength", "z5", float),
    "alpha": ("qubo", "alpha", float),
    "zeta": ("qubo", "zeta", float),
    "impact_bias": ("qubo", "impact_bias_lambda", float),
    "d0_scale": ("qubo", "d0_scale", float),
    "sweeps": ("anneal", "sweeps", int),
    "reads": ("anneal", "reads", int),
    "beta_start": ("anneal", "beta_start", float),
    "beta_end": ("anneal", "beta_end", float),
    "sub_qubo_size": ("decomposition", "sub_qubo_size", int),
    "iterations": ("decomposition", "max_iterations", int),
    "solver": (None, "solver", str),
    "sub_solver": (None, "sub_solver", str),
    "tabu_tenure": (None, "tabu_tenure", int),
    "tabu_steps": (None, "tabu_max_steps", int),
    "min_track_hits": (None, "min_track_hits", int),
    "seed": (None, "seed", int),
}


def _add_config_flags(p: argparse.ArgumentParser, with_event: bool = True) -> None:
    p.add_argument("--config", type=Path, help="YAML file with PipelineConfig overrides")
    p.add_argument("--geometry", type=Path, help="detector geometry YAML")
    p.add_argument("-o", "--output-dir", type=Path, help="directory for artifacts")
    if with_event:
        g = p.add_argument_group("event")
        g.add_argument("--hits", type=Path, help="hits CSV (otherwise a synthetic event is generated)")
        g.add_argument("--truth", type=Path, help="truth CSV")
        g.add_argument("--particles", type=int, help="synthetic particle count")
        g.add_argument("--noise", type=float, help="synthetic noise fraction")
        g.add_argument("--pt-min", type=float, help="MeV")
        g.add_argument("--pt-max", type=float, help="MeV")
        g.add_argument("--event-seed", type=int)
    g = p.add_argument_group("cuts and weights")
    for name in ("max_layer_gap", "max_abs_dzdr", "max_r_gap", "seed_min_pt", "max_abs_z0", "max_holes",
                 "max_abs_qpt", "max_delta_theta", "max_qpt_diff", "min_strength", "z1", "z2", "z3", "z4",
                 "z5", "alpha", "zeta", "impact_bias", "d0_scale", "min_track_hits"):
        g.add_argument("--" + name.replace("_", "-"), type=_FLAGS[name][2])
    _add_solver_flags(p)


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("solver")
    g.add_argument("--solver", choices=SOLVERS)
    g.add_argument("--sub-solver", choices=("anneal", "brute_force"))
    for name in ("sweeps", "reads", "beta_start", "beta_end", "sub_qubo_size", "iterations", "tabu_tenure",
                 "tabu_steps", "seed"):
        g.add_argument("--" + name.replace("_", "-"), type=_FLAGS[name][2])


def build_config(args: argparse.Namespace) -> PipelineConfig:
    """Defaults, overlaid by ``--config``, overlaid by explicit flags."""
    config = PipelineConfig()
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            config = PipelineConfig.from_dict(yaml.safe_load(fh) or {}, config)
    overrides: dict = defaultdict(dict)
    for flag, (section, name, _) in _FLAGS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if section is None:
            overrides[name] = value
        else:
            overrides[section][name] = value
    if getattr(args, "geometry", None):
        overrides["geometry"] = DetectorGeometry.from_file(args.geometry).to_dict()
    if getattr(args, "hits", None) or getattr(args, "truth", None):
        overrides["hits_path"] = str(args.hits) if args.hits else None
        overrides["truth_path"] = str(args.truth) if args.truth else None
    if getattr(args, "output_dir", None):
        overrides["output_dir"] = str(args.output_dir)
    return PipelineConfig.from_dict(dict(overrides), config)


def _cmd_run(args) -> int:
    config = build_config(args)
    result = run_pipeline(config)
    if result.report is None:
        print(f"error: {result.error}", file=sys.stderr)
        return EXIT_UNDEFINED
    sys.stdout.write(result.report.to_json())
    return EXIT_OK


def _cmd_scan(args) -> int:
    config = build_config(args)
    rows = run_multiplicity_scan(config, args.fractions, csv_path=args.csv, jobs=args.jobs)
    if args.csv is None:
        w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]) if rows else [])
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_ERROR


def _cmd_gen(args) -> int:
    geometry = DetectorGeometry.from_file(args.geometry) if args.geometry else None
    event = generate_synthetic_event(
        args.particles, args.noise, (args.pt_min, args.pt_max), seed=args.seed, geometry=geometry
    )
    write_event(event, args.hits, args.truth)
    log.info("wrote %d hits of %d particles", len(event.hits), len(event.truth))
    return EXIT_OK


def _cmd_solve(args) -> int:
    config = build_config(args)
    qubo = parse_qubo_file(args.qubo)
    result = solve_qubo(qubo, config)
    if args.out:
        result.write_json(args.out)
    else:
        print(json.dumps(result.to_dict(), indent=2))
    return EXIT_OK


def read_candidates(path: str | Path) -> list[TrackCandidate]:
    """Candidates from a doublets CSV; without a ``candidate_id`` column they are rebuilt from chains."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if rows and "candidate_id" not in rows[0]:
        return build_track_candidates(Doublet(int(r["inner_hit_id"]), int(r["outer_hit_id"])) for r in rows)
    groups: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for r in rows:
        groups[int(r["candidate_id"])].append((int(r["inner_hit_id"]), int(r["outer_hit_id"])))
    candidates = []
    for cid, pairs in sorted(groups.items()):
        pairs.sort()
        outer = {b for _, b in pairs}
        by_inner = dict(pairs)
        start = next(a for a, _ in pairs if a not in outer)
        hits = [start]
        while hits[-1] in by_inner:
            hits.append(by_inner[hits[-1]])
        candidates.append(TrackCandidate(cid, tuple(hits), (), 0.0))
    return candidates


def _cmd_score(args) -> int:
    geometry = DetectorGeometry.from_file(args.geometry) if args.geometry else None
    event = load_event(args.hits, args.truth, geometry)
    report = evaluate(read_candidates(args.doublets), event)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tripletqubo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full pipeline on one event")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("scan", help="multiplicity scan over fractions of one event")
    _add_config_flags(p)
    p.add_argument("--fractions", type=float, nargs="+", default=[0.1, 0.25, 0.5, 0.75, 1.0])
    p.add_argument("--csv", type=Path, help="scan CSV path (default stdout)")
    p.add_argument("--jobs", type=int, default=1, help="concurrent scan points")
    p.set_defaults(func=_cmd_scan)

    p = sub.add_parser("gen", help="write a synthetic event as hits and truth CSV")
    p.add_argument("--particles", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--pt-min", type=float, default=1000.0)
    p.add_argument("--pt-max", type=float, default=10000.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--geometry", type=Path)
    p.add_argument("--hits", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("solve", help="solve a QUBO file")
    p.add_argument("qubo", type=Path)
    p.add_argument("--out", type=Path, help="result JSON path (default stdout)")
    p.add_argument("--config", type=Path)
    _add_solver_flags(p)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("score", help="score a doublets CSV against truth")
    p.add_argument("--doublets", type=Path, required=True)
    p.add_argument("--hits", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--geometry", type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_cmd_score)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UndefinedMetricError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED
    except PipelineError as exc:
        if isinstance(exc.cause, UndefinedMetricError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_UNDEFINED
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
