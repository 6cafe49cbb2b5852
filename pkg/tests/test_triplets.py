import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import circumradius, naive_relation_kind, single_track_event
from tripletqubo.events import Event, Hit, TruthParticle, dedup_per_layer, generate_synthetic_event
from tripletqubo.qubo import strength
from tripletqubo.seeding import Doublet, SeedingCuts, generate_initial_doublets
from tripletqubo.triplets import (
    CONFLICT,
    NONE,
    QUADRUPLET,
    DegenerateHitsError,
    RelationSet,
    Triplet,
    TripletCuts,
    TripletRelation,
    build_quadruplet_relations,
    build_relations,
    build_triplets,
    chain_lengths,
    curvature_q_over_pt,
    delta_theta,
    prune_triplets,
    write_triplets,
)

CONSECUTIVE = SeedingCuts(max_layer_gap=0)


def _circle_hits(radius, angles, cx=None, cy=0.0):
    """Hits on a circle through the origin-ish region; layer = index."""
    cx = radius if cx is None else cx
    return [Hit(k + 1, cx + radius * math.cos(t), cy + radius * math.sin(t), 0.0, k) for k, t in enumerate(angles)]


# ---------------------------------------------------------------------------
# features


def test_collinear_curvature_is_zero():
    hits = [Hit(1, 10, 10, 0, 0), Hit(2, 20, 20, 0, 1), Hit(3, 30, 30, 0, 2)]
    assert curvature_q_over_pt(*hits, 2.0) == 0.0


def test_known_circle_curvature():
    hits = _circle_hits(5000.0, [math.pi - 0.01, math.pi - 0.02, math.pi - 0.03])
    assert abs(curvature_q_over_pt(*hits, 2.0)) == pytest.approx(1 / (0.3 * 2 * 5000), rel=1e-6)


def test_curvature_order_independent():
    hits = _circle_hits(3000.0, [math.pi - 0.01, math.pi - 0.03, math.pi - 0.06])
    ref = curvature_q_over_pt(*hits, 2.0)
    for perm in itertools.permutations(hits):
        assert curvature_q_over_pt(*perm, 2.0) == ref


def test_coincident_hits_raise():
    with pytest.raises(DegenerateHitsError):
        curvature_q_over_pt(Hit(1, 10, 0, 0, 0), Hit(2, 10, 0, 5, 1), Hit(3, 30, 1, 0, 2), 2.0)


@pytest.mark.parametrize("charge", [1, -1])
def test_curvature_sign_follows_charge(charge):
    ev = single_track_event(5, pt=3000.0, charge=charge)
    hits = [ev.hit(h) for h in ev.truth[0].hit_ids]
    q = curvature_q_over_pt(*hits[:3], 2.0)
    assert np.sign(q) == charge
    assert abs(q) == pytest.approx(1 / 3000.0, rel=1e-6)


@given(
    st.floats(500.0, 1e5),
    st.floats(0.0, 2 * math.pi),
    st.lists(st.floats(0.001, 0.05), min_size=2, max_size=2),
)
def test_circle_radius_recovered(radius, start, steps):
    angles = [start, start + steps[0], start + steps[0] + steps[1]]
    hits = _circle_hits(radius, angles, cx=0.0)
    pts = [(h.x, h.y) for h in hits]
    expected = 1.0 / (0.3 * 2.0 * circumradius(*pts))
    assert abs(curvature_q_over_pt(*hits, 2.0)) == pytest.approx(expected, rel=1e-6)
    assert abs(curvature_q_over_pt(*hits, 2.0)) == pytest.approx(1 / (0.6 * radius), rel=1e-6)


def test_delta_theta_straight_line():
    hits = [Hit(1, 10, 0, 5, 0), Hit(2, 20, 0, 10, 1), Hit(3, 40, 0, 20, 2)]
    assert delta_theta(*hits) == pytest.approx(0.0, abs=1e-15)


def test_delta_theta_arithmetic():
    # theta_ab = pi/2 (dz = 0), theta_bc = pi/2 - 0.05
    dr = 100.0
    hits = [Hit(1, 100, 0, 0, 0), Hit(2, 200, 0, 0, 1), Hit(3, 300, 0, dr / math.tan(math.pi / 2 - 0.05), 2)]
    assert delta_theta(*hits) == pytest.approx(0.05, abs=1e-12)


def test_delta_theta_degenerate():
    with pytest.raises(DegenerateHitsError):
        delta_theta(Hit(1, 10, 0, 0, 0), Hit(2, 0, 10, 0, 1), Hit(3, 30, 0, 0, 2))


def test_true_track_passes_delta_theta_cut():
    ev = generate_synthetic_event(1, 0.0, (5000, 5000), seed=3)
    hits = [ev.hit(h) for h in ev.truth[0].hit_ids]
    for a, b, c in zip(hits, hits[1:], hits[2:]):
        assert delta_theta(a, b, c) <= 0.1


# ---------------------------------------------------------------------------
# triplet building


def test_one_triplet_from_two_doublets():
    hits = (Hit(1, 32, 0, 0, 0), Hit(2, 72, 0, 0, 1), Hit(3, 116, 0, 0, 2))
    (t,) = build_triplets([Doublet(1, 2), Doublet(2, 3)], Event(hits, ()))
    assert t.hits == (1, 2, 3) and t.holes == 0 and t.q_over_pt == 0.0


def test_no_shared_middle_hit():
    hits = (Hit(1, 32, 0, 0, 0), Hit(2, 72, 0, 0, 1), Hit(3, 116, 0, 0, 2), Hit(4, 172, 0, 0, 3))
    assert build_triplets([Doublet(1, 2), Doublet(3, 4)], Event(hits, ())) == []


def test_empty_doublets():
    assert build_triplets([], Event((), ())) == []


@pytest.mark.parametrize("n", range(5, 11))
def test_track_yields_n_minus_2_triplets(n):
    ev = single_track_event(n)
    doublets = generate_initial_doublets(ev, CONSECUTIVE)
    assert len(build_triplets(doublets, ev)) == n - 2


def test_holes_counted():
    hits = (Hit(1, 32, 0, 0, 0), Hit(2, 116, 0, 0, 2), Hit(3, 172, 0, 0, 3), Hit(4, 360, 0, 0, 5))
    ev = Event(hits, ())
    (t,) = build_triplets([Doublet(1, 2), Doublet(2, 3)], ev)
    assert t.holes == 1
    assert build_triplets([Doublet(1, 2), Doublet(2, 4)], ev) == []


def naive_triplets(doublets, event, cuts):
    out = []
    for (a, b), (b2, c) in itertools.product(doublets, repeat=2):
        if b != b2:
            continue
        ha, hb, hc = event.hit(a), event.hit(b), event.hit(c)
        holes = (hb.layer - ha.layer - 1) + (hc.layer - hb.layer - 1)
        qpt = curvature_q_over_pt(ha, hb, hc, event.geometry.field_strength)
        dth = delta_theta(ha, hb, hc)
        if holes <= cuts.max_holes and abs(qpt) <= cuts.max_abs_qpt and dth <= cuts.max_delta_theta:
            out.append((a, b, c, holes, qpt, dth))
    return sorted(out)


@given(st.integers(0, 2**16))
def test_triplets_match_naive_join(seed):
    ev = dedup_per_layer(generate_synthetic_event(6, 0.2, seed=seed))
    doublets = generate_initial_doublets(ev)
    cuts = TripletCuts()
    got = build_triplets(doublets, ev, cuts)
    want = naive_triplets(doublets, ev, cuts)
    assert [t.hits for t in got] == [w[:3] for w in want]
    for t, w in zip(got, want):
        assert t.holes == w[3]
        assert t.q_over_pt == pytest.approx(w[4], rel=1e-9, abs=1e-15)
        assert t.delta_theta == pytest.approx(w[5], rel=1e-9, abs=1e-15)
    assert [t.id for t in got] == list(range(len(got)))


@given(st.integers(0, 2**16))
def test_triplet_invariants(seed):
    ev = dedup_per_layer(generate_synthetic_event(8, 0.2, seed=seed))
    for t in build_triplets(generate_initial_doublets(ev), ev):
        a, b, c = (ev.hit(h) for h in t.hits)
        assert a.r < b.r < c.r
        assert t.holes == (b.layer - a.layer - 1) + (c.layer - b.layer - 1) >= 0
        assert t.delta_theta >= 0


def test_impact_estimates_near_zero_for_prompt_tracks():
    ev = single_track_event(6, pt=4000.0)
    for t in build_triplets(generate_initial_doublets(ev, CONSECUTIVE), ev):
        assert abs(t.d0_estimate) < 0.1


def test_write_triplets(tmp_path):
    t = Triplet(0, 1, 2, 3, 0, 1e-4, 0.01, 0.0, 0.0)
    write_triplets([t], tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "triplet_id,hit_a,hit_b,hit_c,holes,q_over_pt,delta_theta"
    assert lines[1].startswith("0,1,2,3,0,")


# ---------------------------------------------------------------------------
# relations


def _t(k, a, b, c, qpt=0.0, dth=0.0, holes=0):
    return Triplet(k, a, b, c, holes, qpt, dth, 0.0, 0.0)


@pytest.mark.parametrize("n", range(5, 11))
def test_track_yields_n_minus_3_quadruplets(n):
    ev = single_track_event(n)
    triplets = build_triplets(generate_initial_doublets(ev, CONSECUTIVE), ev)
    rel = build_relations(triplets)
    assert rel.count(QUADRUPLET) == n - 3
    assert rel.count(CONFLICT) == 0


def test_shared_pair_outside_chain_is_conflict():
    rel = build_relations([_t(0, 1, 2, 3), _t(1, 1, 2, 4)])
    assert list(rel) == [TripletRelation(CONFLICT, 0, 1, 0.0)]


def test_disjoint_triplets_have_no_relation():
    assert len(build_relations([_t(0, 1, 2, 3), _t(1, 4, 5, 6)])) == 0


def test_chain_is_quadruplet_oriented_inner_first():
    rel = build_relations([_t(0, 2, 3, 4), _t(1, 1, 2, 3)])
    (r,) = list(rel)
    assert (r.kind, r.i, r.j) == (QUADRUPLET, 1, 0)
    assert r.strength == pytest.approx(1.0)


def test_chain_failing_cuts_is_none():
    rel = build_relations([_t(0, 1, 2, 3, qpt=0.0), _t(1, 2, 3, 4, qpt=5e-4)])
    assert [r.kind for r in rel] == [NONE]
    rel = build_relations([_t(0, 1, 2, 3, holes=1), _t(1, 2, 3, 4, holes=1)])  # S = 1/9
    assert [r.kind for r in rel] == [NONE]


def test_single_hit_junction_is_none():
    rel = build_relations([_t(0, 1, 2, 3), _t(1, 3, 4, 5)])
    assert [r.kind for r in rel] == [NONE]


@given(st.integers(0, 2**16))
def test_relations_agree_with_naive_classifier(seed):
    ev = dedup_per_layer(generate_synthetic_event(6, 0.3, seed=seed))
    triplets = build_triplets(generate_initial_doublets(ev), ev)
    cuts = TripletCuts()
    rel = {(min(r.i, r.j), max(r.i, r.j)): r for r in build_relations(triplets, cuts)}
    assert len(rel) == len(build_relations(triplets, cuts))  # no duplicate pairs
    for t1, t2 in itertools.combinations(triplets, 2):
        kind = naive_relation_kind(t1, t2)
        r = rel.get((t1.id, t2.id))
        if kind is None:
            assert r is None
        elif kind == "conflict":
            assert r.kind == CONFLICT
        elif kind == "junction":
            assert r.kind == NONE
        else:
            s = strength(t1, t2)
            ok = abs(t1.q_over_pt - t2.q_over_pt) <= cuts.max_qpt_diff and s > cuts.min_strength
            assert r.kind == (QUADRUPLET if ok else NONE)
            if ok:
                assert r.strength == pytest.approx(s, abs=1e-12) and r.strength > 0.2
                inner, outer = (t1, t2) if t1.hits[1:] == t2.hits[:2] else (t2, t1)
                assert (r.i, r.j) == (inner.id, outer.id)


@given(st.integers(0, 2**16))
def test_quadruplet_only_builder_agrees(seed):
    ev = dedup_per_layer(generate_synthetic_event(10, 0.2, seed=seed))
    triplets = build_triplets(generate_initial_doublets(ev), ev)
    full = build_relations(triplets).of_kind(QUADRUPLET)
    quick = build_quadruplet_relations(triplets)
    assert np.array_equal(full.i, quick.i) and np.array_equal(full.j, quick.j)
    assert np.allclose(full.strengths, quick.strengths, rtol=0, atol=1e-15)


def test_relation_set_helpers():
    rs = RelationSet.from_relations([TripletRelation(CONFLICT, 2, 3), TripletRelation(QUADRUPLET, 0, 1, 0.9)])
    assert [r.i for r in rs] == [0, 2]
    assert rs.count(QUADRUPLET) == 1 and len(rs.of_kind(CONFLICT)) == 1
    assert len(RelationSet.empty()) == 0


# ---------------------------------------------------------------------------
# pruning


def _quad(pairs):
    return RelationSet.from_relations([TripletRelation(QUADRUPLET, i, j, 1.0) for i, j in pairs])


def test_chain_lengths():
    assert chain_lengths(4, _quad([(0, 1), (1, 2)])).tolist() == [3, 3, 3, 1]
    assert chain_lengths(4, _quad([(0, 1), (2, 1), (1, 3)])).tolist() == [3, 3, 3, 3]


def test_prune_isolated_triplet():
    kept, rel = prune_triplets([_t(0, 1, 2, 3)], RelationSet.empty())
    assert kept == [] and len(rel) == 0


def test_prune_four_hit_chain():
    kept, _ = prune_triplets([_t(0, 1, 2, 3), _t(1, 2, 3, 4)], _quad([(0, 1)]))
    assert kept == []


def test_prune_keeps_five_hit_chain():
    triplets = [_t(0, 1, 2, 3), _t(1, 2, 3, 4), _t(2, 3, 4, 5)]
    kept, rel = prune_triplets(triplets, _quad([(0, 1), (1, 2)]))
    assert [t.hits for t in kept] == [t.hits for t in triplets]
    assert len(rel) == 2


def test_prune_reindexes():
    triplets = [_t(0, 9, 8, 7), _t(1, 1, 2, 3), _t(2, 2, 3, 4), _t(3, 3, 4, 5)]
    rel = RelationSet.from_relations(
        [TripletRelation(QUADRUPLET, 1, 2, 1.0), TripletRelation(QUADRUPLET, 2, 3, 1.0), TripletRelation(CONFLICT, 0, 1)]
    )
    kept, out = prune_triplets(triplets, rel)
    assert [t.id for t in kept] == [0, 1, 2]
    assert [t.hits for t in kept] == [(1, 2, 3), (2, 3, 4), (3, 4, 5)]
    assert [(r.i, r.j) for r in out] == [(0, 1), (1, 2)]


@given(st.integers(0, 2**16))
def test_prune_fixed_point(seed):
    ev = dedup_per_layer(generate_synthetic_event(10, 0.2, seed=seed))
    triplets = build_triplets(generate_initial_doublets(ev), ev)
    kept, rel = prune_triplets(triplets, build_relations(triplets))
    if not kept:
        return
    quad = rel.of_kind(QUADRUPLET)
    in_quad = set(quad.i.tolist()) | set(quad.j.tolist())
    assert in_quad == set(range(len(kept)))
    assert (chain_lengths(len(kept), rel) + 2 >= 5).all()
    again, _ = prune_triplets(kept, rel)
    assert again == kept
