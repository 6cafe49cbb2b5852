"""End-to-end reconstruction: event -> doublets -> triplets -> QUBO -> solve -> metrics."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .events import DetectorGeometry, Event, dedup_per_layer, generate_synthetic_event, load_event, split_event
from .postmetrics import (
    MetricsReport,
    TrackCandidate,
    build_track_candidates,
    evaluate,
    resolve_conflicts,
    selected_triplets_to_doublets,
    write_final_doublets,
)
from .qubo import Qubo, QuboParams, StrengthParams, build_qubo, write_qubo_file
from .seeding import SeedingCuts, generate_initial_doublets
from .solver import (
    AnnealSchedule,
    DecompositionConfig,
    SolveResult,
    brute_force,
    decompose_solve,
    simulated_anneal,
    tabu_search,
)
from .triplets import TripletCuts, build_quadruplet_relations, build_relations, build_triplets, prune_triplets

log = logging.getLogger(__name__)

SOLVERS = ("decompose", "anneal", "tabu", "brute_force")
SCAN_COLUMNS = (
    "fraction",
    "n_particles",
    "n_triplets",
    "n_qubo_vars",
    "efficiency",
    "purity",
    "score",
    "energy",
    "wall_time_s",
    "d_true",
    "d_rec",
    "d_rec_matched",
    "d_rec_oa",
    "d_fake",
    "status",
)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class SyntheticSpec:
    n_particles: int = 200
    noise_fraction: float = 0.1
    pt_min: float = 1000.0
    pt_max: float = 10000.0
    seed: int = 0
    sigma_transverse: float = 0.01
    sigma_z: float = 0.2


@dataclass(frozen=True)
class PipelineConfig:
    geometry: DetectorGeometry = field(default_factory=DetectorGeometry)
    hits_path: str | None = None
    truth_path: str | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    seeding: SeedingCuts = field(default_factory=SeedingCuts)
    triplet_cuts: TripletCuts = field(default_factory=TripletCuts)
    strength: StrengthParams = field(default_factory=StrengthParams)
    qubo: QuboParams = field(default_factory=QuboParams)
    solver: str = "decompose"
    sub_solver: str = "anneal"
    anneal: AnnealSchedule = field(default_factory=AnnealSchedule)
    decomposition: DecompositionConfig = field(default_factory=DecompositionConfig)
    tabu_tenure: int | None = None
    tabu_max_steps: int = 2000
    min_track_hits: int = 5
    output_dir: str | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; choose from {SOLVERS}")
        if (self.hits_path is None) != (self.truth_path is None):
            raise ValueError("hits_path and truth_path must be given together")
        for p in (self.hits_path, self.truth_path):
            if p is not None and not Path(p).is_file():
                raise FileNotFoundError(p)
        if self.min_track_hits < 3:
            raise ValueError("min_track_hits must be >= 3")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["geometry"] = self.geometry.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any], base: "PipelineConfig | None" = None) -> "PipelineConfig":
        """Overlay a (possibly partial, nested) dict onto ``base`` or the defaults."""
        base = base or cls()
        kwargs: dict[str, Any] = {}
        for key, value in d.items():
            if key == "geometry":
                geo = {**base.geometry.to_dict(), **value}
                kwargs["geometry"] = DetectorGeometry(
                    layer_radii=tuple(geo["layer_radii"]),
                    barrel_half_length=float(geo["half_length_mm"]),
                    field_strength=float(geo["b_tesla"]),
                    layer_tolerance=float(geo["layer_tolerance_mm"]),
                )
            elif key == "decomposition":
                value = dict(value)
                sub = value.pop("sub_schedule", None)
                dec = dataclasses.replace(base.decomposition, **value)
                if sub is not None:
                    dec = dataclasses.replace(dec, sub_schedule=dataclasses.replace(dec.sub_schedule, **sub))
                kwargs[key] = dec
            elif key in ("synthetic", "seeding", "triplet_cuts", "strength", "qubo", "anneal"):
                kwargs[key] = dataclasses.replace(getattr(base, key), **value)
            elif key in {f.name for f in dataclasses.fields(cls)}:
                kwargs[key] = value
            else:
                raise ValueError(f"unknown config key {key!r}")
        return dataclasses.replace(base, **kwargs)


@dataclass
class PipelineResult:
    report: MetricsReport | None
    solve: SolveResult | None
    qubo: Qubo | None
    candidates: list[TrackCandidate] = field(default_factory=list)
    n_particles: int = 0
    n_doublets: int = 0
    n_triplets: int = 0
    timings: dict[str, float] = field(default_factory=dict)
    error: Exception | None = None


def load_input_event(config: PipelineConfig) -> Event:
    if config.hits_path is not None:
        return load_event(config.hits_path, config.truth_path, config.geometry)
    s = config.synthetic
    return generate_synthetic_event(
        s.n_particles,
        s.noise_fraction,
        (s.pt_min, s.pt_max),
        seed=s.seed,
        geometry=config.geometry,
        sigma_transverse=s.sigma_transverse,
        sigma_z=s.sigma_z,
    )


def solve_qubo(qubo: Qubo, config: PipelineConfig) -> SolveResult:
    if config.solver == "decompose":
        cfg = dataclasses.replace(config.decomposition, seed=config.seed)
        return decompose_solve(qubo, cfg, config.sub_solver)
    if config.solver == "anneal":
        return simulated_anneal(qubo, dataclasses.replace(config.anneal, seed=config.seed))
    if config.solver == "tabu":
        return tabu_search(qubo, None, config.tabu_tenure, config.tabu_max_steps, config.seed)
    return brute_force(qubo)


class _Stage:
    def __init__(self, name: str, timings: dict[str, float]):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, PipelineError):
            raise PipelineError(self.name, exc) from exc
        return False


def run_pipeline(config: PipelineConfig, event: Event | None = None) -> PipelineResult:
    """Run every stage; write artifacts when ``config.output_dir`` is set.

    Raises :class:`PipelineError` naming the failing stage. Undefined
    metrics (no qualifying truth) do not raise: the result carries the
    error and ``report`` is None.
    """
    config.validate()
    timings: dict[str, float] = {}
    out = Path(config.output_dir) if config.output_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_manifest(out / "manifest.json", config)

    with _Stage("load", timings):
        event = event if event is not None else load_input_event(config)
        event = dedup_per_layer(event)
    with _Stage("seeding", timings):
        doublets = generate_initial_doublets(event, config.seeding)
    with _Stage("triplets", timings):
        triplets = build_triplets(doublets, event, config.triplet_cuts)
        quads = build_quadruplet_relations(triplets, config.triplet_cuts, config.strength)
        kept, _ = prune_triplets(triplets, quads, config.min_track_hits)
        relations = build_relations(kept, config.triplet_cuts, config.strength)
    with _Stage("qubo", timings):
        qubo = build_qubo(kept, relations, config.strength, config.qubo)
        if out is not None:
            write_qubo_file(qubo, out / "qubo.txt")
    with _Stage("solve", timings):
        solve = solve_qubo(qubo, config)
        if out is not None:
            solve.write_json(out / "solve.json")
    with _Stage("postprocess", timings):
        selected = [t for t, bit in zip(kept, solve.best) if bit]
        final_doublets = selected_triplets_to_doublets(kept, solve.best)
        candidates = build_track_candidates(final_doublets, selected, relations)
        candidates = resolve_conflicts(candidates, config.min_track_hits)
        if out is not None:
            write_final_doublets(candidates, out / "doublets.csv")

    result = PipelineResult(None, solve, qubo, candidates, len(event.truth), len(doublets), len(triplets), timings)
    from .postmetrics import UndefinedMetricError

    try:
        result.report = evaluate(candidates, event)
    except UndefinedMetricError as exc:
        result.error = exc
        return result
    if out is not None:
        (out / "metrics.json").write_text(result.report.to_json(), encoding="utf-8")
    log.info(
        "eff=%.4f pur=%.4f score=%.4f vars=%d energy=%.4f",
        result.report.efficiency,
        result.report.purity,
        result.report.score,
        qubo.n,
        solve.best_energy,
    )
    return result


def _write_manifest(path: Path, config: PipelineConfig) -> None:
    import numba

    manifest = {
        "config": config.to_dict(),
        "seed": config.seed,
        "versions": {
            "tripletqubo": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "numba": numba.__version__,
        },
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Multiplicity scans


def _scan_point(args) -> dict:
    config, base_event, fraction = args
    row: dict[str, Any] = {c: "" for c in SCAN_COLUMNS}
    row["fraction"] = fraction
    t0 = time.perf_counter()
    try:
        event = split_event(base_event, fraction, seed=config.seed)
        if config.output_dir:
            config = dataclasses.replace(config, output_dir=str(Path(config.output_dir) / f"fraction_{fraction:g}"))
        res = run_pipeline(config, event)
        row.update(
            n_particles=res.n_particles,
            n_triplets=res.n_triplets,
            n_qubo_vars=res.qubo.n,
            energy=res.solve.best_energy,
        )
        if res.report is None:
            row["status"] = f"undefined: {res.error}"
        else:
            r = res.report
            row.update(
                efficiency=r.efficiency,
                purity=r.purity,
                score=r.score,
                d_true=r.d_true,
                d_rec=r.d_rec,
                d_rec_matched=r.d_rec_matched,
                d_rec_oa=r.d_rec_oa,
                d_fake=r.d_fake,
                status="ok",
            )
    except Exception as exc:  # per-point failures are recorded, the scan goes on
        log.exception("scan point %g failed", fraction)
        row["status"] = f"error: {exc}"
    row["wall_time_s"] = round(time.perf_counter() - t0, 3)
    return row


def run_multiplicity_scan(
    config: PipelineConfig,
    fractions: Sequence[float],
    base_event: Event | None = None,
    csv_path: str | Path | None = None,
    jobs: int = 1,
) -> list[dict]:
    """Split ``base_event`` at each fraction and run the pipeline on it.

    Returns one row per fraction, in input order, failed points included.
    """
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"fractions must be in (0, 1], got {f}")
    base_event = base_event if base_event is not None else load_input_event(config)
    tasks = [(config, base_event, float(f)) for f in fractions]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_scan_point, tasks))
    else:
        rows = [_scan_point(t) for t in tasks]
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(SCAN_COLUMNS))
            w.writeheader()
            w.writerows(rows)
    return rows
