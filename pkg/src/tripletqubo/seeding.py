"""Layer-pair doublet seeding.

A deliberately simple seeder: every pair of hits on nearby layers that passes
a few geometric cuts becomes a doublet. It is meant to be very efficient and
quite impure; purifying the doublet set is the job of the QUBO downstream.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .events import CURVATURE_CONSTANT, Event


class Doublet(NamedTuple):
    inner: int
    outer: int


@dataclass(frozen=True)
class SeedingCuts:
    """Geometric doublet cuts.

    ``min_pt`` (MeV) opens an azimuthal window wide enough for any track of at
    least that momentum coming from the beam line, plus ``phi_tolerance``
    radians. ``max_abs_z0`` (mm) bounds the straight-line extrapolation of
    the doublet to ``r = 0``. Either can be ``None`` to disable it.
    """

    max_layer_gap: int = 1
    max_abs_dzdr: float = 10.0
    max_r_gap: float = 300.0
    min_pt: float | None = 900.0
    phi_tolerance: float = 0.002
    max_abs_z0: float | None = 100.0

    def __post_init__(self):
        if self.max_layer_gap < 0:
            raise ValueError("max_layer_gap must be >= 0")
        if self.max_abs_dzdr <= 0 or self.max_r_gap <= 0:
            raise ValueError("seeding bounds must be positive")
        if self.min_pt is not None and self.min_pt <= 0:
            raise ValueError("min_pt must be positive")
        if self.max_abs_z0 is not None and self.max_abs_z0 <= 0:
            raise ValueError("max_abs_z0 must be positive")


def _bend(r: np.ndarray | float, radius: float) -> np.ndarray:
    # azimuth swept by a circle through the origin when reaching radius r
    return np.arcsin(np.minimum(1.0, np.asarray(r) / (2.0 * radius)))


def _max_dphi(r_in, r_out, cuts: SeedingCuts, field_strength: float):
    if cuts.min_pt is None:
        return np.full(np.broadcast(r_in, r_out).shape, math.pi)
    radius = cuts.min_pt / (CURVATURE_CONSTANT * field_strength)
    return _bend(r_out, radius) - _bend(r_in, radius) + cuts.phi_tolerance


def _wrap(dphi: np.ndarray) -> np.ndarray:
    return (dphi + np.pi) % (2.0 * np.pi) - np.pi


def doublet_arrays(event: Event, cuts: SeedingCuts | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized core of :func:`generate_initial_doublets`, returning (inner, outer) hit ids."""
    cuts = cuts or SeedingCuts()
    a = event.arrays
    if len(a["hit_id"]) == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    phi = np.arctan2(a["y"], a["x"])
    by_layer = {}
    for layer in np.unique(a["layer"]):
        idx = np.flatnonzero(a["layer"] == layer)
        by_layer[int(layer)] = idx[np.argsort(phi[idx], kind="stable")]

    inner_parts, outer_parts = [], []
    for l_in, idx_in in by_layer.items():
        for gap in range(1, cuts.max_layer_gap + 2):
            idx_out = by_layer.get(l_in + gap)
            if idx_out is None:
                continue
            r_in = a["r"][idx_in]
            window = _max_dphi(r_in, a["r"][idx_out].max(), cuts, event.geometry.field_strength)
            # outer hits replicated at -2pi/+2pi so windows never wrap
            ext = np.concatenate([idx_out, idx_out, idx_out])
            ext_phi = np.concatenate([phi[idx_out] - 2 * np.pi, phi[idx_out], phi[idx_out] + 2 * np.pi])
            lo = np.searchsorted(ext_phi, phi[idx_in] - window, side="left")
            hi = np.searchsorted(ext_phi, phi[idx_in] + window, side="right")
            # a full-circle window must not visit the same hit twice
            hi = np.minimum(hi, lo + len(idx_out))
            counts = hi - lo
            if counts.sum() == 0:
                continue
            src = np.repeat(idx_in, counts)
            offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
            dst = ext[np.repeat(lo, counts) + offsets]
            inner_parts.append(src)
            outer_parts.append(dst)
    if not inner_parts:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    src = np.concatenate(inner_parts)
    dst = np.concatenate(outer_parts)

    dr = a["r"][dst] - a["r"][src]
    dz = a["z"][dst] - a["z"][src]
    with np.errstate(divide="ignore", invalid="ignore"):
        dzdr = np.abs(dz / dr)
    keep = (dr > 0) & (dr <= cuts.max_r_gap) & (dzdr <= cuts.max_abs_dzdr)
    if cuts.max_abs_z0 is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            z0 = a["z"][src] - a["r"][src] * dz / dr
        keep &= np.abs(z0) <= cuts.max_abs_z0
    keep &= np.abs(_wrap(phi[dst] - phi[src])) <= _max_dphi(
        a["r"][src], a["r"][dst], cuts, event.geometry.field_strength
    )
    inner = a["hit_id"][src[keep]]
    outer = a["hit_id"][dst[keep]]
    order = np.lexsort((outer, inner))
    return inner[order], outer[order]


def generate_initial_doublets(event: Event, cuts: SeedingCuts | None = None) -> list[Doublet]:
    """All hit pairs on layers 1..1+max_layer_gap apart that pass the seeding cuts.

    Sorted by ``(inner, outer)`` hit id.
    """
    inner, outer = doublet_arrays(event, cuts)
    return [Doublet(int(i), int(o)) for i, o in zip(inner.tolist(), outer.tolist())]


def doublet_efficiency_purity(
    doublets: Iterable[Doublet], event: Event, min_pt: float = 0.0, min_hits: int = 0
) -> tuple[float, float]:
    """Efficiency and purity of a doublet set against all truth doublets.

    By default every particle counts; pass ``min_pt``/``min_hits`` to restrict
    to the qualifying particles used for the final metrics.
    """
    from .postmetrics import count_doublets

    counts = count_doublets(doublets, event, min_pt=min_pt, min_hits=min_hits)
    return counts.efficiency, counts.purity


def write_doublets(doublets: Iterable[Doublet], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["inner_hit_id", "outer_hit_id"])
        w.writerows(doublets)


def read_doublets(path: str | Path) -> list[Doublet]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [Doublet(int(row["inner_hit_id"]), int(row["outer_hit_id"])) for row in csv.DictReader(fh)]
