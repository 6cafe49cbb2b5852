"""Acceptance suite: one PASS/FAIL line per criterion, with wall time.

Lines are printed as each test finishes (visible with ``-s``) and repeated
in the terminal summary.
"""
import time

import numpy as np
import pytest
from scipy.sparse.csgraph import connected_components

from oracles import disjoint_tracks_event, enumerate_minimum, eq2_strength, random_qubo_dicts, single_track_event
from tripletqubo.events import generate_synthetic_event
from tripletqubo.pipeline import PipelineConfig, SyntheticSpec, run_multiplicity_scan, run_pipeline
from tripletqubo.qubo import Qubo, QuboParams, build_qubo, energy, parse_qubo_file, strength, write_qubo_file
from tripletqubo.seeding import SeedingCuts, generate_initial_doublets
from tripletqubo.solver import AnnealSchedule, brute_force, clamp_sub_qubo, decompose_solve, simulated_anneal
from tripletqubo.triplets import CONFLICT, QUADRUPLET, Triplet, build_relations, build_triplets

RESULTS: list[str] = []
CONSECUTIVE = SeedingCuts(max_layer_gap=0)


def _report(number, title, ok, detail, t0, budget_s):
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < budget_s
    line = f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail} ({elapsed:.1f} s, budget {budget_s:g} s)"
    RESULTS.append(line)
    print("\n" + line)
    assert ok, line


def test_c1_combinatoric_identities():
    t0 = time.perf_counter()
    counts = {}
    for n in range(5, 11):
        ev = single_track_event(n)
        triplets = build_triplets(generate_initial_doublets(ev, CONSECUTIVE), ev)
        counts[n] = (len(triplets), build_relations(triplets).count(QUADRUPLET))
    ok = all(counts[n] == (n - 2, n - 3) for n in counts)
    detail = ", ".join(f"n={n}: {t}/{q}" for n, (t, q) in counts.items())
    _report(1, "triplets n-2 and quadruplets n-3", ok, detail, t0, 1)


def test_c2_strength_formula():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for k in range(1000):
        q1 = rng.uniform(-8e-4, 8e-4)
        q2 = np.clip(q1 + rng.uniform(-1e-4, 1e-4), -8e-4, 8e-4)
        d1, d2 = rng.uniform(0, 0.1, 2)
        h1, h2 = rng.integers(0, 2, 2)
        ti = Triplet(0, 1, 2, 3, int(h1), q1, d1, 0.0, 0.0)
        tj = Triplet(1, 2, 3, 4, int(h2), q2, d2, 0.0, 0.0)
        worst = max(worst, abs(strength(ti, tj) - eq2_strength(q1 - q2, d1, d2, h1, h2)))
    _report(2, "strength matches hand expansion", worst <= 1e-12, f"max abs diff {worst:.2e} on 1000 inputs", t0, 1)


def test_c3_solver_oracle_equivalence():
    t0 = time.perf_counter()
    sa_match = dec_match = 0
    below = 0
    for seed in range(50):
        lin, quad = random_qubo_dicts(np.random.default_rng(seed), 20, 0.3, 2.0)
        q = Qubo.from_dicts(lin, quad)
        ref = brute_force(q).best_energy
        sa = simulated_anneal(q, AnnealSchedule(reads=10, seed=seed)).best_energy
        dec = decompose_solve(q, sub_solver="brute_force").best_energy
        sa_match += abs(sa - ref) <= 1e-9
        dec_match += abs(dec - ref) <= 1e-9
        below += (sa < ref - 1e-9) + (dec < ref - 1e-9)
    ok = sa_match >= 0.95 * 50 and dec_match == 50 and below == 0
    detail = f"anneal {sa_match}/50, decompose {dec_match}/50, below oracle {below}"
    _report(3, "solvers agree with brute force", ok, detail, t0, 60)


def test_c4_clamping_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 40))
        lin, quad = random_qubo_dicts(rng, n, rng.uniform(0.05, 0.9))
        q = Qubo.from_dicts(lin, quad)
        block = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
        x = rng.integers(0, 2, n).astype(np.uint8)
        sub, const = clamp_sub_qubo(q, block, x)
        xb = rng.integers(0, 2, len(block)).astype(np.uint8)
        full = x.copy()
        full[block] = xb
        worst = max(worst, abs(energy(q, full) - (energy(sub, xb) + const)))
    _report(4, "clamped sub-QUBO energy identity", worst <= 1e-10, f"max abs diff {worst:.2e} on 100 triples", t0, 5)


@pytest.mark.slow
def test_c5_low_multiplicity_performance():
    t0 = time.perf_counter()
    rows = []
    for seed in range(5):
        config = PipelineConfig(synthetic=SyntheticSpec(200, 0.1, 1000.0, 10000.0, seed=seed), seed=seed)
        r = run_pipeline(config).report
        rows.append((r.efficiency, r.purity, r.score))
    ok = all(min(row) >= 0.90 for row in rows)
    detail = "; ".join(f"seed {s}: eff {e:.3f} pur {p:.3f} score {sc:.3f}" for s, (e, p, sc) in enumerate(rows))
    _report(5, "200 particles, 10% noise, all metrics >= 0.90", ok, detail, t0, 600)


@pytest.mark.slow
def test_c6_degradation_trend():
    t0 = time.perf_counter()
    config = PipelineConfig(synthetic=SyntheticSpec(2000, 0.1, 1000.0, 10000.0, seed=0))
    base = generate_synthetic_event(2000, 0.1, (1000.0, 10000.0), seed=0)
    rows = run_multiplicity_scan(config, [0.25, 0.5, 1.0], base)
    assert all(r["status"] == "ok" for r in rows), rows
    fakes = [r["d_fake"] for r in rows]
    ok = rows[-1]["purity"] <= rows[0]["purity"] and fakes == sorted(fakes)
    detail = ", ".join(f"f={r['fraction']:g}: eff {r['efficiency']:.3f} pur {r['purity']:.4f} fakes {r['d_fake']}" for r in rows)
    _report(6, "purity falls and fakes rise with occupancy", ok, detail, t0, 1800)


def _ground_state_by_component(q: Qubo) -> np.ndarray:
    n_comp, labels = connected_components(q.adjacency, directed=False)
    x = np.zeros(q.n, dtype=np.uint8)
    for c in range(n_comp):
        block = np.flatnonzero(labels == c)
        sub, _ = clamp_sub_qubo(q, block, x)
        x[block] = brute_force(sub).best
    return x


def test_c7_bias_shift_insensitivity():
    t0 = time.perf_counter()
    ev = disjoint_tracks_event(10)
    triplets = build_triplets(generate_initial_doublets(ev, CONSECUTIVE), ev)
    rel = build_relations(triplets)
    states = {}
    for alpha in (-0.01, 0.0, 0.01):
        states[alpha] = _ground_state_by_component(build_qubo(triplets, rel, q=QuboParams(alpha=alpha)))
    same = all(np.array_equal(states[0.0], s) for s in states.values())
    ok = rel.count(CONFLICT) == 0 and same
    detail = f"{len(triplets)} variables, {rel.count(CONFLICT)} conflicts, {int(states[0.0].sum())} selected, identical={same}"
    _report(7, "ground state unchanged for alpha in {-0.01, 0, 0.01}", ok, detail, t0, 10)


def test_c8_round_trip_and_determinism(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    round_trips = 0
    for k in range(100):
        lin, quad = random_qubo_dicts(rng, int(rng.integers(0, 40)), rng.uniform(0, 1))
        q = Qubo.from_dicts(lin, quad)
        write_qubo_file(q, tmp_path / f"q{k}.txt")
        round_trips += parse_qubo_file(tmp_path / f"q{k}.txt").structurally_equal(q)
    blobs = []
    for name in ("a", "b"):
        run_pipeline(PipelineConfig(synthetic=SyntheticSpec(40, 0.1, seed=8), seed=8, output_dir=str(tmp_path / name)))
        blobs.append((tmp_path / name / "metrics.json").read_bytes())
    ok = round_trips == 100 and blobs[0] == blobs[1]
    detail = f"{round_trips}/100 round trips, metrics JSON identical={blobs[0] == blobs[1]}"
    _report(8, "file round trip and run determinism", ok, detail, t0, 10)


def test_oracle_self_check():
    """The brute-force oracle used above agrees with plain enumeration."""
    lin, quad = random_qubo_dicts(np.random.default_rng(0), 10)
    assert brute_force(Qubo.from_dicts(lin, quad)).best_energy == pytest.approx(enumerate_minimum(lin, quad)[0])
