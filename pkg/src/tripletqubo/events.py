"""Event model, CSV ingestion and synthetic barrel events.

An event is a set of hits on concentric barrel cylinders plus the truth
association of hits to particles. Everything here is immutable; the
simplification steps (per-layer deduplication, fractional splitting) return
new events.

Units follow the usual tracking conventions: lengths in mm, momenta in MeV,
magnetic field in tesla, so that ``pT [MeV] = 0.3 * B [T] * R [mm]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
import yaml

NOISE_ID = 0

#: conversion factor in pT[MeV] = CURVATURE_CONSTANT * B[T] * R[mm]
CURVATURE_CONSTANT = 0.3

DEFAULT_LAYER_RADII = (32.0, 72.0, 116.0, 172.0, 260.0, 360.0, 500.0, 660.0, 820.0, 1020.0)

HITS_COLUMNS = ("hit_id", "x", "y", "z", "layer_id")
TRUTH_COLUMNS = ("hit_id", "particle_id", "pt", "charge")


class EventFormatError(ValueError):
    """Raised when an input file does not follow the expected layout."""


class ReferentialIntegrityError(ValueError):
    """Raised when truth rows reference hits that do not exist."""


@dataclass(frozen=True)
class DetectorGeometry:
    """Concentric barrel cylinders in a solenoidal field."""

    layer_radii: tuple[float, ...] = DEFAULT_LAYER_RADII
    barrel_half_length: float = 1100.0
    field_strength: float = 2.0
    layer_tolerance: float = 15.0

    def __post_init__(self):
        radii = tuple(float(r) for r in self.layer_radii)
        object.__setattr__(self, "layer_radii", radii)
        if not radii:
            raise ValueError("geometry needs at least one layer")
        if radii[0] <= 0 or any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError(f"layer radii must be positive and strictly increasing: {radii}")
        if self.barrel_half_length <= 0:
            raise ValueError("barrel_half_length must be positive")

    @property
    def n_layers(self) -> int:
        return len(self.layer_radii)

    def layer_of(self, r: float) -> int | None:
        """Nearest layer index for a transverse radius, or None outside every band."""
        radii = np.asarray(self.layer_radii)
        idx = int(np.argmin(np.abs(radii - r)))
        if abs(radii[idx] - r) > self.layer_tolerance:
            return None
        return idx

    @classmethod
    def from_file(cls, path: str | Path) -> "DetectorGeometry":
        """Read ``layer_radii``, ``half_length_mm`` and ``b_tesla`` from a YAML/JSON file."""
        with open(path, encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh) or {}
        kwargs = {}
        if "layer_radii" in cfg:
            radii = cfg["layer_radii"]
            if isinstance(radii, str):
                radii = [float(v) for v in radii.replace(",", " ").split()]
            kwargs["layer_radii"] = tuple(radii)
        if "half_length_mm" in cfg:
            kwargs["barrel_half_length"] = float(cfg["half_length_mm"])
        if "b_tesla" in cfg:
            kwargs["field_strength"] = float(cfg["b_tesla"])
        if "layer_tolerance_mm" in cfg:
            kwargs["layer_tolerance"] = float(cfg["layer_tolerance_mm"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "layer_radii": list(self.layer_radii),
            "half_length_mm": self.barrel_half_length,
            "b_tesla": self.field_strength,
            "layer_tolerance_mm": self.layer_tolerance,
        }


@dataclass(frozen=True)
class Hit:
    hit_id: int
    x: float
    y: float
    z: float
    layer: int

    @property
    def r(self) -> float:
        return math.hypot(self.x, self.y)


@dataclass(frozen=True)
class TrackParameters:
    """Perigee parameters. Only ``q_over_pt`` and the impact parameters are consumed downstream."""

    d0: float
    z0: float
    phi0: float
    cot_theta: float
    q_over_pt: float


@dataclass(frozen=True)
class TruthParticle:
    particle_id: int
    pt: float
    charge: int
    vertex: tuple[float, float, float] = (0.0, 0.0, 0.0)
    hit_ids: tuple[int, ...] = ()
    params: TrackParameters | None = None


@dataclass(frozen=True)
class Event:
    hits: tuple[Hit, ...]
    truth: tuple[TruthParticle, ...]
    geometry: DetectorGeometry = field(default_factory=DetectorGeometry)

    def __post_init__(self):
        object.__setattr__(self, "hits", tuple(self.hits))
        object.__setattr__(self, "truth", tuple(self.truth))

    @cached_property
    def hit_index(self) -> dict[int, int]:
        """Map from hit id to position in ``hits``."""
        return {h.hit_id: i for i, h in enumerate(self.hits)}

    def hit(self, hit_id: int) -> Hit:
        return self.hits[self.hit_index[hit_id]]

    @cached_property
    def particle_of_hit(self) -> dict[int, int]:
        owner = {h.hit_id: NOISE_ID for h in self.hits}
        for p in self.truth:
            for hid in p.hit_ids:
                owner[hid] = p.particle_id
        return owner

    @cached_property
    def particles(self) -> dict[int, TruthParticle]:
        return {p.particle_id: p for p in self.truth}

    @cached_property
    def arrays(self) -> dict[str, np.ndarray]:
        """Columnar view of the hits (ids, coordinates, radius, layer)."""
        n = len(self.hits)
        out = {
            "hit_id": np.fromiter((h.hit_id for h in self.hits), dtype=np.int64, count=n),
            "x": np.fromiter((h.x for h in self.hits), dtype=np.float64, count=n),
            "y": np.fromiter((h.y for h in self.hits), dtype=np.float64, count=n),
            "z": np.fromiter((h.z for h in self.hits), dtype=np.float64, count=n),
            "layer": np.fromiter((h.layer for h in self.hits), dtype=np.int64, count=n),
        }
        out["r"] = np.hypot(out["x"], out["y"])
        return out

    @property
    def noise_hit_ids(self) -> list[int]:
        owner = self.particle_of_hit
        return [h.hit_id for h in self.hits if owner[h.hit_id] == NOISE_ID]


def _sorted_by_r(hit_ids: Iterable[int], lookup: dict[int, Hit]) -> tuple[int, ...]:
    return tuple(sorted(hit_ids, key=lambda h: (lookup[h].r, h)))


# ---------------------------------------------------------------------------
# CSV ingestion


def _read_csv(path: str | Path, required: Sequence[str]) -> pd.DataFrame:
    df = pd.read_csv(path)
    df.columns = [c.strip() for c in df.columns]
    for col in required:
        if col not in df.columns:
            raise EventFormatError(f"{path}: missing column '{col}'")
    return df


def load_event(hits_path: str | Path, truth_path: str | Path, geometry: DetectorGeometry | None = None) -> Event:
    """Read a TrackML-style pair of CSV files.

    Hits outside the barrel (beyond the half-length, or with a radius outside
    every layer band) are dropped, together with their truth rows. The layer
    index is derived from the hit radius; the ``layer_id`` column must be
    present but is not otherwise used. Hits without a truth row are noise.
    """
    geometry = geometry or DetectorGeometry()
    hits_df = _read_csv(hits_path, HITS_COLUMNS)
    truth_df = _read_csv(truth_path, TRUTH_COLUMNS)

    known = set(int(h) for h in hits_df["hit_id"])
    dangling = sorted(set(int(h) for h in truth_df["hit_id"]) - known)
    if dangling:
        raise ReferentialIntegrityError(
            f"{truth_path}: truth references unknown hit_id(s) {dangling[:10]}"
        )

    hits = []
    for row in hits_df.itertuples(index=False):
        x, y, z = float(row.x), float(row.y), float(row.z)
        if abs(z) > geometry.barrel_half_length:
            continue
        layer = geometry.layer_of(math.hypot(x, y))
        if layer is None:
            continue
        hits.append(Hit(int(row.hit_id), x, y, z, layer))
    lookup = {h.hit_id: h for h in hits}

    particles = []
    truth_df = truth_df[truth_df["particle_id"] != NOISE_ID]
    for pid, group in truth_df.groupby("particle_id", sort=True):
        hit_ids = [int(h) for h in group["hit_id"] if int(h) in lookup]
        pt = float(group["pt"].iloc[0])
        charge = int(np.sign(group["charge"].iloc[0])) or 1
        particles.append(
            TruthParticle(int(pid), pt, charge, hit_ids=_sorted_by_r(hit_ids, lookup))
        )
    return Event(tuple(hits), tuple(particles), geometry)


def write_event(event: Event, hits_path: str | Path, truth_path: str | Path) -> None:
    a = event.arrays
    pd.DataFrame(
        {"hit_id": a["hit_id"], "x": a["x"], "y": a["y"], "z": a["z"], "layer_id": a["layer"]}
    ).to_csv(hits_path, index=False, float_format="%.6f")
    owner = event.particle_of_hit
    parts = event.particles
    rows = []
    for h in event.hits:
        pid = owner[h.hit_id]
        p = parts.get(pid)
        rows.append((h.hit_id, pid, p.pt if p else 0.0, p.charge if p else 0))
    pd.DataFrame(rows, columns=list(TRUTH_COLUMNS)).to_csv(truth_path, index=False, float_format="%.6f")


# ---------------------------------------------------------------------------
# Synthetic events


def _helix_layer_crossings(vertex, pt, charge, phi, cot_theta, geometry):
    """Transverse positions and z of the first outgoing crossing with each layer.

    The particle starts at ``vertex`` moving with azimuth ``phi``; positive
    charges turn clockwise for a field along +z. Returns a list of
    ``(layer, x, y, z)``; stops at the first layer that is not
    reached or lies outside the barrel.
    """
    vx, vy, vz = vertex
    R = pt / (CURVATURE_CONSTANT * geometry.field_strength)
    h = 1 if charge > 0 else -1
    cx = vx + h * R * math.sin(phi)
    cy = vy - h * R * math.cos(phi)
    dc = math.hypot(cx, cy)
    gamma = math.atan2(cy, cx)
    out = []
    for layer, rl in enumerate(geometry.layer_radii):
        if rl <= math.hypot(vx, vy):
            continue
        k = (dc * dc + R * R - rl * rl) / (2.0 * h * R * dc)
        if abs(k) > 1.0:
            break
        best_t = None
        for psi in (gamma + math.asin(k), gamma + math.pi - math.asin(k)):
            t = (h * (phi - psi)) % (2.0 * math.pi)
            if best_t is None or t < best_t:
                best_t = t
        psi = phi - h * best_t
        x = cx - h * R * math.sin(psi)
        y = cy + h * R * math.cos(psi)
        z = vz + R * best_t * cot_theta
        if abs(z) > geometry.barrel_half_length:
            break
        out.append((layer, x, y, z))
    return out


def _perigee(vertex, pt, charge, phi, cot_theta, field_strength) -> TrackParameters:
    vx, vy, vz = vertex
    R = pt / (CURVATURE_CONSTANT * field_strength)
    h = 1 if charge > 0 else -1
    cx = vx + h * R * math.sin(phi)
    cy = vy - h * R * math.cos(phi)
    dc = math.hypot(cx, cy)
    d0 = dc - R
    # point of closest approach lies on the line origin-centre
    px, py = cx - R * cx / dc, cy - R * cy / dc
    # momentum direction at that point: tangent, orientation set by charge
    phi0 = math.atan2(cy, cx) + h * math.pi / 2.0
    s = (vx - px) * math.cos(phi) + (vy - py) * math.sin(phi)
    return TrackParameters(d0, vz - s * cot_theta, phi0, cot_theta, charge / pt)


def generate_synthetic_event(
    n_particles: int,
    noise_fraction: float = 0.0,
    pt_range: tuple[float, float] = (1000.0, 10000.0),
    seed: int = 0,
    geometry: DetectorGeometry | None = None,
    eta_max: float = 0.9,
    sigma_transverse: float = 0.01,
    sigma_z: float = 0.2,
    vertex_sigma_xy: float = 0.01,
    vertex_sigma_z: float = 5.0,
    charge: int | None = None,
) -> Event:
    """Generate helical tracks plus uniform noise in a barrel detector.

    Parameters
    ----------
    n_particles : int
        Number of particles; each is a helix from a vertex near the origin.
    noise_fraction : float
        ``noise_hits / (noise_hits + track_hits)``.
    pt_range : (float, float)
        Transverse momentum range in MeV, sampled uniformly.
    seed : int
        Seed; equal seeds give identical events.
    eta_max : float
        Pseudorapidity is drawn uniformly from ``[-eta_max, eta_max]``. The
        default keeps tracks from the nominal vertex inside the barrel.
    sigma_transverse, sigma_z : float
        Gaussian hit smearing along r*phi and along z (mm). Hits stay on
        their cylinder.
    charge : int, optional
        Force the charge of every particle (default random sign).
    """
    if n_particles < 0:
        raise ValueError("n_particles must be >= 0")
    if not 0.0 <= noise_fraction < 1.0:
        raise ValueError("noise_fraction must be in [0, 1)")
    if pt_range[0] <= 0 or pt_range[1] < pt_range[0]:
        raise ValueError(f"invalid pt_range {pt_range}")
    geometry = geometry or DetectorGeometry()
    rng = np.random.default_rng(seed)

    raw_hits = []  # (particle_id, layer, x, y, z)
    particles = []
    for pid in range(1, n_particles + 1):
        pt = float(rng.uniform(*pt_range))
        q = charge if charge is not None else int(rng.choice((-1, 1)))
        phi = float(rng.uniform(-math.pi, math.pi))
        eta = float(rng.uniform(-eta_max, eta_max))
        cot_theta = math.sinh(eta)
        vertex = (
            float(rng.normal(0.0, vertex_sigma_xy)),
            float(rng.normal(0.0, vertex_sigma_xy)),
            float(rng.normal(0.0, vertex_sigma_z)),
        )
        crossings = _helix_layer_crossings(vertex, pt, q, phi, cot_theta, geometry)
        for layer, x, y, z in crossings:
            rl = math.hypot(x, y)
            dphi = rng.normal(0.0, sigma_transverse) / rl
            hp = math.atan2(y, x) + dphi
            raw_hits.append((pid, layer, rl * math.cos(hp), rl * math.sin(hp), z + rng.normal(0.0, sigma_z)))
        particles.append((pid, pt, q, vertex, _perigee(vertex, pt, q, phi, cot_theta, geometry.field_strength)))

    n_track = len(raw_hits)
    n_noise = int(round(noise_fraction / (1.0 - noise_fraction) * n_track)) if n_track else 0
    for _ in range(n_noise):
        layer = int(rng.integers(geometry.n_layers))
        rl = geometry.layer_radii[layer]
        hp = rng.uniform(-math.pi, math.pi)
        z = rng.uniform(-geometry.barrel_half_length, geometry.barrel_half_length)
        raw_hits.append((NOISE_ID, layer, rl * math.cos(hp), rl * math.sin(hp), float(z)))

    ids = rng.permutation(len(raw_hits)) + 1
    hits = []
    members: dict[int, list[int]] = {}
    for hid, (pid, layer, x, y, z) in zip(ids, raw_hits):
        hits.append(Hit(int(hid), float(x), float(y), float(z), layer))
        if pid != NOISE_ID:
            members.setdefault(pid, []).append(int(hid))
    hits.sort(key=lambda h: h.hit_id)
    lookup = {h.hit_id: h for h in hits}
    truth = tuple(
        TruthParticle(pid, pt, q, vertex, _sorted_by_r(members.get(pid, ()), lookup), params)
        for pid, pt, q, vertex, params in particles
    )
    return Event(tuple(hits), truth, geometry)


# ---------------------------------------------------------------------------
# Dataset simplifications


def dedup_per_layer(event: Event) -> Event:
    """Keep one hit per (particle, layer): the one with the smallest radius."""
    lookup = {h.hit_id: h for h in event.hits}
    removed = set()
    truth = []
    for p in event.truth:
        survivors: dict[int, int] = {}
        for hid in p.hit_ids:
            h = lookup[hid]
            cur = survivors.get(h.layer)
            if cur is None or (h.r, hid) < (lookup[cur].r, cur):
                if cur is not None:
                    removed.add(cur)
                survivors[h.layer] = hid
            else:
                removed.add(hid)
        if removed.isdisjoint(p.hit_ids):
            truth.append(p)
        else:
            kept = [hid for hid in p.hit_ids if hid not in removed]
            truth.append(_replace_hits(p, _sorted_by_r(kept, lookup)))
    if not removed:
        return event
    hits = tuple(h for h in event.hits if h.hit_id not in removed)
    return Event(hits, tuple(truth), event.geometry)


def _replace_hits(p: TruthParticle, hit_ids: tuple[int, ...]) -> TruthParticle:
    return TruthParticle(p.particle_id, p.pt, p.charge, p.vertex, hit_ids, p.params)


def split_event(event: Event, fraction: float, seed: int = 0) -> Event:
    """Keep a random ``fraction`` of the particles and the same fraction of noise hits."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    n_keep = int(math.floor(fraction * len(event.truth) + 0.5))
    chosen = rng.choice(len(event.truth), size=n_keep, replace=False) if n_keep else []
    kept_particles = tuple(event.truth[i] for i in sorted(chosen))

    noise = event.noise_hit_ids
    n_noise = int(math.floor(fraction * len(noise) + 0.5))
    chosen_noise = rng.choice(len(noise), size=n_noise, replace=False) if n_noise else []
    keep_ids = {noise[i] for i in chosen_noise}
    for p in kept_particles:
        keep_ids.update(p.hit_ids)
    hits = tuple(h for h in event.hits if h.hit_id in keep_ids)
    return Event(hits, kept_particles, event.geometry)
