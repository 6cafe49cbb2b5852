"""Triplets, their features and the pairwise relations between them.

A triplet is two doublets sharing their middle hit, ``(a, b) + (b, c)``. Its
features are the signed curvature expressed as q/pT, the bending angle in
the r-z plane and the number of layers skipped. Two triplets ``(a, b, c)``
and ``(d, e, f)`` chain into a quadruplet when ``b = d`` and ``c = e``; any
other hit sharing, except the single-hit ``c = d`` junction, is a conflict.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .events import CURVATURE_CONSTANT, Event, Hit
from .qubo import StrengthParams, strength_values

QUADRUPLET = "quadruplet"
CONFLICT = "conflict"
NONE = "none"

# hit-pair budget per vectorized chunk when joining doublets
_CHUNK = 4_000_000


class DegenerateHitsError(ValueError):
    pass


@dataclass(frozen=True)
class TripletCuts:
    max_holes: int = 1
    max_abs_qpt: float = 8e-4  # MeV^-1
    max_delta_theta: float = 0.1
    max_qpt_diff: float = 1e-4  # MeV^-1
    min_strength: float = 0.2


@dataclass(frozen=True, slots=True)
class Triplet:
    id: int
    a: int
    b: int
    c: int
    holes: int
    q_over_pt: float
    delta_theta: float
    d0_estimate: float = 0.0
    z0_estimate: float = 0.0

    @property
    def hits(self) -> tuple[int, int, int]:
        return (self.a, self.b, self.c)


class TripletRelation(NamedTuple):
    kind: str
    i: int
    j: int
    strength: float = 0.0


class RelationSet:
    """Array-backed collection of :class:`TripletRelation`, sorted by ``(i, j)``.

    For quadruplets ``i`` is always the inner triplet of the chain.
    """

    def __init__(self, i, j, kinds, strengths):
        self.i = np.asarray(i, dtype=np.int64)
        self.j = np.asarray(j, dtype=np.int64)
        self.kinds = np.asarray(kinds, dtype=object)
        self.strengths = np.asarray(strengths, dtype=np.float64)

    @classmethod
    def empty(cls) -> "RelationSet":
        return cls(np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, object), np.empty(0))

    @classmethod
    def from_relations(cls, relations: Sequence[TripletRelation]) -> "RelationSet":
        rel = sorted(relations, key=lambda r: (r.i, r.j))
        return cls([r.i for r in rel], [r.j for r in rel], [r.kind for r in rel], [r.strength for r in rel])

    def __len__(self) -> int:
        return len(self.i)

    def __getitem__(self, k: int) -> TripletRelation:
        return TripletRelation(self.kinds[k], int(self.i[k]), int(self.j[k]), float(self.strengths[k]))

    def __iter__(self) -> Iterator[TripletRelation]:
        for k in range(len(self)):
            yield self[k]

    def mask(self, keep: np.ndarray) -> "RelationSet":
        return RelationSet(self.i[keep], self.j[keep], self.kinds[keep], self.strengths[keep])

    def of_kind(self, kind: str) -> "RelationSet":
        return self.mask(self.kinds == kind)

    def count(self, kind: str) -> int:
        return int(np.count_nonzero(self.kinds == kind))


# ---------------------------------------------------------------------------
# Features


def _canonical(*hits: Hit) -> list[Hit]:
    return sorted(hits, key=lambda h: (h.r, h.hit_id))


def signed_curvature(xa, ya, xb, yb, xc, yc):
    """Signed Menger curvature (mm^-1); positive when the path turns counter-clockwise."""
    abx, aby = xb - xa, yb - ya
    bcx, bcy = xc - xb, yc - yb
    cross = abx * bcy - aby * bcx
    prod = np.hypot(abx, aby) * np.hypot(bcx, bcy) * np.hypot(xc - xa, yc - ya)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(prod > 0, 2.0 * cross / prod, 0.0)


def curvature_q_over_pt(a: Hit, b: Hit, c: Hit, b_tesla: float) -> float:
    """q/pT in MeV^-1 of the circle through three hits.

    Hits are first put in radial order, so the result does not depend on
    argument order. A clockwise turn (negative z of ``ab x bc``) is a positive
    charge. Collinear hits give exactly 0.
    """
    a, b, c = _canonical(a, b, c)
    pts = [(h.x, h.y) for h in (a, b, c)]
    for p, q in ((0, 1), (1, 2), (0, 2)):
        if pts[p] == pts[q]:
            raise DegenerateHitsError("coincident transverse positions")
    kappa = float(signed_curvature(a.x, a.y, b.x, b.y, c.x, c.y))
    if kappa == 0.0:
        return 0.0
    return -kappa / (CURVATURE_CONSTANT * b_tesla)


def _theta(dr, dz):
    return np.arctan2(dr, dz)


def delta_theta(a: Hit, b: Hit, c: Hit) -> float:
    """|theta_ab - theta_bc| of the two segments in the r-z plane, in [0, pi]."""
    a, b, c = _canonical(a, b, c)
    for p, q in ((a, b), (b, c)):
        if q.r - p.r == 0.0 and q.z - p.z == 0.0:
            raise DegenerateHitsError("zero-length segment in r-z")
    return float(abs(_theta(b.r - a.r, b.z - a.z) - _theta(c.r - b.r, c.z - b.z)))


def _impact_estimates(xa, ya, za, ra, xb, yb, xc, yc, zc, rc):
    """Transverse distance of the triplet circle from the origin and z at r=0."""
    d = 2.0 * (xa * (yb - yc) + xb * (yc - ya) + xc * (ya - yb))
    sa, sb, sc = xa * xa + ya * ya, xb * xb + yb * yb, xc * xc + yc * yc
    with np.errstate(divide="ignore", invalid="ignore"):
        ux = (sa * (yb - yc) + sb * (yc - ya) + sc * (ya - yb)) / d
        uy = (sa * (xc - xb) + sb * (xa - xc) + sc * (xb - xa)) / d
        radius = np.hypot(xa - ux, ya - uy)
        d0_circle = np.hypot(ux, uy) - radius
        # straight line through a and c
        lx, ly = xc - xa, yc - ya
        d0_line = (xa * ly - ya * lx) / np.hypot(lx, ly)
        z0 = za - ra * (zc - za) / (rc - ra)
    d0 = np.where(np.abs(d) > 1e-9, d0_circle, d0_line)
    return d0, z0


# ---------------------------------------------------------------------------
# Triplet building


def _positions(event: Event, hit_ids: np.ndarray) -> np.ndarray:
    ids = event.arrays["hit_id"]
    order = np.argsort(ids, kind="stable")
    pos = np.searchsorted(ids, hit_ids, sorter=order)
    return order[pos]


def _join_on_middle(inner_pos: np.ndarray, outer_pos: np.ndarray, n_hits: int):
    """Yield (a, b, c) hit-position arrays for every in/out doublet pair sharing b."""
    by_outer = np.argsort(outer_pos, kind="stable")
    by_inner = np.argsort(inner_pos, kind="stable")
    n_in = np.bincount(outer_pos, minlength=n_hits)
    n_out = np.bincount(inner_pos, minlength=n_hits)
    in_start = np.cumsum(n_in) - n_in
    out_start = np.cumsum(n_out) - n_out
    combos = n_in * n_out
    middles = np.flatnonzero(combos)
    if len(middles) == 0:
        return
    chunk_of = (np.cumsum(combos[middles]) - 1) // _CHUNK
    for cid in np.unique(chunk_of):
        chunk = middles[chunk_of == cid]
        k = combos[chunk]
        b = np.repeat(chunk, k)
        local = np.arange(k.sum()) - np.repeat(np.cumsum(k) - k, k)
        ko = n_out[b]
        a_doublet = by_outer[in_start[b] + local // ko]
        c_doublet = by_inner[out_start[b] + local % ko]
        yield inner_pos[a_doublet], b, outer_pos[c_doublet]


def build_triplets(doublets, event: Event, cuts: TripletCuts | None = None) -> list[Triplet]:
    """Join doublets on their shared middle hit and keep triplets passing the cuts.

    A triplet is kept iff its hole count, |q/pT| and r-z bending angle are
    within ``cuts``. Ids follow the ``(a, b, c)`` hit-id order.
    """
    cuts = cuts or TripletCuts()
    doublets = list(doublets)
    if not doublets:
        return []
    arr = np.asarray(doublets, dtype=np.int64).reshape(-1, 2)
    inner_pos = _positions(event, arr[:, 0])
    outer_pos = _positions(event, arr[:, 1])
    h = event.arrays
    b_tesla = event.geometry.field_strength

    kept = []
    for ia, ib, ic in _join_on_middle(inner_pos, outer_pos, len(h["hit_id"])):
        holes = (h["layer"][ib] - h["layer"][ia] - 1) + (h["layer"][ic] - h["layer"][ib] - 1)
        ok = holes <= cuts.max_holes
        ia, ib, ic, holes = ia[ok], ib[ok], ic[ok], holes[ok]
        dth = np.abs(
            _theta(h["r"][ib] - h["r"][ia], h["z"][ib] - h["z"][ia])
            - _theta(h["r"][ic] - h["r"][ib], h["z"][ic] - h["z"][ib])
        )
        ok = dth <= cuts.max_delta_theta
        ia, ib, ic, holes, dth = ia[ok], ib[ok], ic[ok], holes[ok], dth[ok]
        qpt = -signed_curvature(h["x"][ia], h["y"][ia], h["x"][ib], h["y"][ib], h["x"][ic], h["y"][ic]) / (
            CURVATURE_CONSTANT * b_tesla
        )
        ok = np.abs(qpt) <= cuts.max_abs_qpt
        kept.append((ia[ok], ib[ok], ic[ok], holes[ok], dth[ok], qpt[ok]))
    if not kept:
        return []

    ia, ib, ic, holes, dth, qpt = (np.concatenate(parts) for parts in zip(*kept))
    d0, z0 = _impact_estimates(
        h["x"][ia], h["y"][ia], h["z"][ia], h["r"][ia], h["x"][ib], h["y"][ib], h["x"][ic], h["y"][ic], h["z"][ic], h["r"][ic]
    )
    ids = h["hit_id"]
    a, b, c = ids[ia], ids[ib], ids[ic]
    order = np.lexsort((c, b, a))
    return [
        Triplet(k, int(a[o]), int(b[o]), int(c[o]), int(holes[o]), float(qpt[o]), float(dth[o]), float(d0[o]), float(z0[o]))
        for k, o in enumerate(order.tolist())
    ]


def write_triplets(triplets: Sequence[Triplet], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["triplet_id", "hit_a", "hit_b", "hit_c", "holes", "q_over_pt", "delta_theta"])
        for t in triplets:
            w.writerow([t.id, t.a, t.b, t.c, t.holes, repr(t.q_over_pt), repr(t.delta_theta)])


# ---------------------------------------------------------------------------
# Relations


def _triplet_arrays(triplets: Sequence[Triplet]):
    n = len(triplets)
    hits = np.array([t.hits for t in triplets], dtype=np.int64).reshape(n, 3)
    qpt = np.fromiter((t.q_over_pt for t in triplets), dtype=np.float64, count=n)
    dth = np.fromiter((t.delta_theta for t in triplets), dtype=np.float64, count=n)
    holes = np.fromiter((t.holes for t in triplets), dtype=np.int64, count=n)
    return hits, qpt, dth, holes


def _hit_sharing_pairs(hits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique (i, j), i < j, of triplets sharing at least one hit."""
    n = len(hits)
    flat_hits = hits.ravel()
    flat_tid = np.repeat(np.arange(n), 3)
    order = np.lexsort((flat_tid, flat_hits))
    sh, st = flat_hits[order], flat_tid[order]
    boundaries = np.flatnonzero(np.diff(sh)) + 1
    starts = np.concatenate([[0], boundaries])
    sizes = np.diff(np.concatenate([starts, [len(sh)]]))
    # position within its group, and number of later partners
    group_of = np.repeat(np.arange(len(starts)), sizes)
    local = np.arange(len(sh)) - starts[group_of]
    later = sizes[group_of] - 1 - local
    total = int(later.sum())
    if total == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    first = np.repeat(np.arange(len(sh)), later)
    offset = np.arange(total) - np.repeat(np.cumsum(later) - later, later) + 1
    i, j = st[first], st[first + offset]
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    key = np.unique(lo * n + hi)
    return key // n, key % n


def build_relations(
    triplets: Sequence[Triplet], cuts: TripletCuts | None = None, strength_params: StrengthParams | None = None
) -> RelationSet:
    """Classify every hit-sharing triplet pair.

    * chain pattern ``(a, b, c) + (b, c, e)`` passing the |delta q/pT| and
      strength cuts: ``quadruplet``, with the inner triplet as ``i``;
    * chain pattern failing those cuts, or the single-hit junction
      ``(a, b, c) + (c, d, e)``: ``none`` (no coupling);
    * anything else: ``conflict``.

    Disjoint pairs get no relation.
    """
    cuts = cuts or TripletCuts()
    if len(triplets) < 2:
        return RelationSet.empty()
    hits, qpt, dth, holes = _triplet_arrays(triplets)
    i, j = _hit_sharing_pairs(hits)
    if len(i) == 0:
        return RelationSet.empty()
    hi, hj = hits[i], hits[j]
    shared = (hi[:, :, None] == hj[:, None, :]).sum(axis=(1, 2))
    chain_ij = (hi[:, 1] == hj[:, 0]) & (hi[:, 2] == hj[:, 1])
    chain_ji = (hj[:, 1] == hi[:, 0]) & (hj[:, 2] == hi[:, 1])
    junction = (shared == 1) & ((hi[:, 2] == hj[:, 0]) | (hj[:, 2] == hi[:, 0]))
    chain = chain_ij | chain_ji

    s = strength_values(qpt[i] - qpt[j], np.maximum(dth[i], dth[j]), holes[i] + holes[j], strength_params)
    passes = chain & (np.abs(qpt[i] - qpt[j]) <= cuts.max_qpt_diff) & (s > cuts.min_strength)

    kinds = np.full(len(i), CONFLICT, dtype=object)
    kinds[chain | junction] = NONE
    kinds[passes] = QUADRUPLET
    # orient quadruplets inner -> outer
    flip = passes & chain_ji
    ri = np.where(flip, j, i)
    rj = np.where(flip, i, j)
    strengths = np.where(passes, s, 0.0)
    order = np.lexsort((rj, ri))
    return RelationSet(ri[order], rj[order], kinds[order], strengths[order])


def build_quadruplet_relations(
    triplets: Sequence[Triplet], cuts: TripletCuts | None = None, strength_params: StrengthParams | None = None
) -> RelationSet:
    """Only the quadruplet relations of :func:`build_relations`.

    Much cheaper than classifying every hit-sharing pair, and all that
    :func:`prune_triplets` needs.
    """
    cuts = cuts or TripletCuts()
    if len(triplets) < 2:
        return RelationSet.empty()
    hits, qpt, dth, holes = _triplet_arrays(triplets)
    base = int(hits.max()) + 1
    head = hits[:, 0] * base + hits[:, 1]
    tail = hits[:, 1] * base + hits[:, 2]
    order = np.argsort(head, kind="stable")
    lo = np.searchsorted(head, tail, side="left", sorter=order)
    hi = np.searchsorted(head, tail, side="right", sorter=order)
    counts = hi - lo
    i = np.repeat(np.arange(len(triplets)), counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    j = order[np.repeat(lo, counts) + local]
    s = strength_values(qpt[i] - qpt[j], np.maximum(dth[i], dth[j]), holes[i] + holes[j], strength_params)
    ok = (np.abs(qpt[i] - qpt[j]) <= cuts.max_qpt_diff) & (s > cuts.min_strength)
    i, j, s = i[ok], j[ok], s[ok]
    srt = np.lexsort((j, i))
    return RelationSet(i[srt], j[srt], np.full(len(i), QUADRUPLET, dtype=object), s[srt])


# ---------------------------------------------------------------------------
# Pruning


def chain_lengths(n: int, relations: RelationSet) -> np.ndarray:
    """Number of triplets on the longest quadruplet chain through each triplet."""
    quad = relations.of_kind(QUADRUPLET)
    src, dst = quad.i, quad.j
    back = np.ones(n, dtype=np.int64)
    fwd = np.ones(n, dtype=np.int64)
    for _ in range(n):
        nb = back.copy()
        np.maximum.at(nb, dst, back[src] + 1)
        nf = fwd.copy()
        np.maximum.at(nf, src, fwd[dst] + 1)
        if np.array_equal(nb, back) and np.array_equal(nf, fwd):
            break
        back, fwd = nb, nf
    return back + fwd - 1


def prune_triplets(
    triplets: Sequence[Triplet], relations: RelationSet, min_hits: int = 5
) -> tuple[list[Triplet], RelationSet]:
    """Drop triplets whose longest quadruplet chain spans fewer than ``min_hits`` hits.

    This also removes every triplet without a quadruplet. Survivors are
    re-numbered ``0..n-1`` and relations re-indexed; repeated until nothing
    changes.
    """
    triplets = list(triplets)
    while True:
        n = len(triplets)
        if n == 0:
            return [], RelationSet.empty()
        keep = chain_lengths(n, relations) + 2 >= min_hits
        if keep.all():
            return triplets, relations
        new_id = np.full(n, -1, dtype=np.int64)
        new_id[keep] = np.arange(int(keep.sum()))
        triplets = [replace(t, id=int(new_id[t.id])) for t in triplets if keep[t.id]]
        both = keep[relations.i] & keep[relations.j]
        rel = relations.mask(both)
        relations = RelationSet(new_id[rel.i], new_id[rel.j], rel.kinds, rel.strengths)
