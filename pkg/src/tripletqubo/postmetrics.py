"""Post-processing of solver output and doublet-level metrics.

Selected triplets are turned back into doublets, doublets are chained into
track candidates, hit-sharing candidates are resolved, and the surviving
doublets are scored against truth.

A reconstructed doublet is *matched* when its two hits are consecutive hits
(in radius order) of one truth particle. A particle *qualifies* when its pT
exceeds 1 GeV and it leaves at least five hits in the barrel; only
qualifying particles enter ``D_true``, and matched doublets of
non-qualifying particles are set aside (``D_rec_oa``) rather than counted
as fakes.
"""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .events import NOISE_ID, Event
from .seeding import Doublet

QUALIFY_MIN_PT = 1000.0
QUALIFY_MIN_HITS = 5


class UndefinedMetricError(ValueError):
    """Raised when a ratio metric has an empty denominator."""


def selected_triplets_to_doublets(triplets, assignment) -> list[Doublet]:
    """Doublets ``(a, b)`` and ``(b, c)`` of every selected triplet, deduplicated and sorted."""
    bits = np.asarray(assignment, dtype=bool)
    if len(bits) != len(triplets):
        raise ValueError(f"assignment has {len(bits)} bits for {len(triplets)} triplets")
    out = set()
    for t, on in zip(triplets, bits):
        if on:
            out.add(Doublet(t.a, t.b))
            out.add(Doublet(t.b, t.c))
    return sorted(out)


# ---------------------------------------------------------------------------
# Track candidates


@dataclass(frozen=True)
class TrackCandidate:
    candidate_id: int
    hit_ids: tuple[int, ...]
    triplet_ids: tuple[int, ...] = ()
    strength: float = 0.0

    def __len__(self) -> int:
        return len(self.hit_ids)

    @property
    def doublets(self) -> list[Doublet]:
        return [Doublet(a, b) for a, b in zip(self.hit_ids, self.hit_ids[1:])]


def _chains(doublets: Iterable[Doublet]) -> list[tuple[int, ...]]:
    succ: dict[int, list[int]] = defaultdict(list)
    n_in: dict[int, int] = defaultdict(int)
    for d in set(doublets):
        succ[d.inner].append(d.outer)
        n_in[d.outer] += 1

    def passes_through(h: int) -> bool:
        return n_in[h] == 1 and len(succ.get(h, ())) == 1

    chains = []
    for u in sorted(succ):
        if passes_through(u):
            continue
        for v in sorted(succ[u]):
            path = [u, v]
            while passes_through(path[-1]):
                path.append(succ[path[-1]][0])
            chains.append(tuple(path))
    return chains


def build_track_candidates(doublets: Iterable[Doublet], triplets: Sequence = (), relations: Iterable = ()) -> list[TrackCandidate]:
    """Chain doublets into candidates, splitting at branch hits.

    A hit with more than one inward or more than one outward doublet ends
    every chain that reaches it, so the branch hit can end up in several
    candidates; :func:`resolve_conflicts` sorts that out. ``triplets`` (the
    selected ones) and ``relations`` are only used to attach source triplets
    and the summed quadruplet strength used for tie-breaking.
    """
    chains = sorted(_chains(doublets))
    by_key = {}
    for t in triplets:
        by_key[(t.a, t.b, t.c)] = t.id
    strength_of = {}
    for rel in relations:
        if rel.kind == "quadruplet":
            strength_of[(rel.i, rel.j)] = rel.strength

    out = []
    for cid, hits in enumerate(chains):
        tids = [by_key[k] for k in zip(hits, hits[1:], hits[2:]) if k in by_key]
        tset = set(tids)
        s = sum(v for (i, j), v in strength_of.items() if i in tset and j in tset) if tset else 0.0
        out.append(TrackCandidate(cid, hits, tuple(tids), s))
    return out


def _longest_segment(hits: Sequence[int], claimed: set[int]) -> tuple[int, ...]:
    best: list[int] = []
    cur: list[int] = []
    for h in hits:
        if h in claimed:
            cur = []
            continue
        cur.append(h)
        if len(cur) > len(best):
            best = list(cur)
    return tuple(best)


def resolve_conflicts(candidates: Iterable[TrackCandidate], min_hits: int = QUALIFY_MIN_HITS) -> list[TrackCandidate]:
    """Make every hit belong to at most one candidate.

    Candidates are visited by decreasing hit count, then decreasing summed
    quadruplet strength, then increasing id. Each one loses the hits already
    claimed by a winner and keeps its longest remaining contiguous stretch;
    stretches shorter than ``min_hits`` are discarded.
    """
    ranked = sorted(
        (c for c in candidates if len(c) >= min_hits),
        key=lambda c: (-len(c), -c.strength, c.candidate_id),
    )
    claimed: set[int] = set()
    kept = []
    for c in ranked:
        if claimed.isdisjoint(c.hit_ids):
            hits = c.hit_ids
        else:
            hits = _longest_segment(c.hit_ids, claimed)
        if len(hits) < min_hits:
            continue
        if hits != c.hit_ids:
            c = TrackCandidate(c.candidate_id, hits, c.triplet_ids, c.strength)
        claimed.update(hits)
        kept.append(c)
    return sorted(kept, key=lambda c: c.candidate_id)


def candidate_doublets(candidates: Iterable[TrackCandidate]) -> list[tuple[int, int, int]]:
    """``(inner, outer, candidate_id)`` rows of the final doublet set."""
    rows = []
    for c in candidates:
        rows.extend((d.inner, d.outer, c.candidate_id) for d in c.doublets)
    return sorted(rows)


def write_final_doublets(candidates: Iterable[TrackCandidate], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["inner_hit_id", "outer_hit_id", "candidate_id"])
        w.writerows(candidate_doublets(candidates))


# ---------------------------------------------------------------------------
# Metrics


def doublet_weight(pt: float) -> float:
    """Per-doublet score weight: ``log10(pT / GeV) + 1``, floored at 0.1."""
    return max(math.log10(pt / 1000.0) + 1.0, 0.1)


def truth_doublets(event: Event) -> dict[Doublet, int]:
    """Consecutive-hit doublets of every truth particle, mapped to the particle id."""
    out = {}
    for p in event.truth:
        if p.particle_id == NOISE_ID:
            continue
        for a, b in zip(p.hit_ids, p.hit_ids[1:]):
            out[Doublet(a, b)] = p.particle_id
    return out


def qualifies(particle, min_pt: float = QUALIFY_MIN_PT, min_hits: int = QUALIFY_MIN_HITS) -> bool:
    return particle.pt > min_pt and len(particle.hit_ids) >= min_hits


@dataclass(frozen=True)
class DoubletCounts:
    d_true: int
    d_rec: int
    d_rec_matched: int
    d_rec_oa: int
    weight_true: float
    weight_matched: float

    @property
    def d_fake(self) -> int:
        return self.d_rec - self.d_rec_matched - self.d_rec_oa

    @property
    def efficiency(self) -> float:
        if self.d_true == 0:
            raise UndefinedMetricError("efficiency undefined: no true doublets")
        return self.d_rec_matched / self.d_true

    @property
    def purity(self) -> float:
        denom = self.d_rec - self.d_rec_oa
        if denom == 0:
            raise UndefinedMetricError("purity undefined: no countable reconstructed doublets")
        return self.d_rec_matched / denom

    @property
    def score(self) -> float:
        if self.d_true == 0:
            raise UndefinedMetricError("score undefined: no true doublets")
        return self.weight_matched / self.weight_true


def count_doublets(
    doublets: Iterable, event: Event, min_pt: float = QUALIFY_MIN_PT, min_hits: int = QUALIFY_MIN_HITS
) -> DoubletCounts:
    truth = truth_doublets(event)
    parts = event.particles
    good = {pid for pid, p in parts.items() if qualifies(p, min_pt, min_hits)}
    weight = {pid: doublet_weight(parts[pid].pt) for pid in good}

    d_true = 0
    w_true = 0.0
    for pid in truth.values():
        if pid in good:
            d_true += 1
            w_true += weight[pid]

    rec = {Doublet(int(d[0]), int(d[1])) for d in doublets}
    matched = oa = 0
    w_matched = 0.0
    for d in rec:
        pid = truth.get(d)
        if pid is None:
            continue
        if pid in good:
            matched += 1
            w_matched += weight[pid]
        else:
            oa += 1
    return DoubletCounts(d_true, len(rec), matched, oa, w_true, w_matched)


def efficiency(doublets: Iterable, event: Event) -> float:
    return count_doublets(doublets, event).efficiency


def purity(doublets: Iterable, event: Event) -> float:
    return count_doublets(doublets, event).purity


def weighted_score(doublets: Iterable, event: Event) -> float:
    """pT-weighted fraction of true doublets found."""
    return count_doublets(doublets, event).score


@dataclass(frozen=True)
class MetricsReport:
    efficiency: float
    purity: float
    score: float
    d_true: int
    d_rec: int
    d_rec_matched: int
    d_rec_oa: int
    n_candidates: int

    @property
    def d_fake(self) -> int:
        return self.d_rec - self.d_rec_matched - self.d_rec_oa

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def evaluate(candidates: Sequence[TrackCandidate], event: Event) -> MetricsReport:
    """Score the doublets of the final track candidates.

    An empty reconstruction has purity 1 by convention (nothing wrong was
    reported); an event without qualifying truth raises
    :class:`UndefinedMetricError`.
    """
    rows = candidate_doublets(candidates)
    counts = count_doublets(((a, b) for a, b, _ in rows), event)
    eff = counts.efficiency
    try:
        pur = counts.purity
    except UndefinedMetricError:
        pur = 1.0
    return MetricsReport(
        efficiency=eff,
        purity=pur,
        score=counts.score,
        d_true=counts.d_true,
        d_rec=counts.d_rec,
        d_rec_matched=counts.d_rec_matched,
        d_rec_oa=counts.d_rec_oa,
        n_candidates=len(candidates),
    )
