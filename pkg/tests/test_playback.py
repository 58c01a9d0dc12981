import math
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from scenegen.ontology import Relation
from scenegen.playback import (
    POLICIES,
    EgoPolicy,
    PlaybackError,
    batch_consistency,
    following_script,
    get_policy,
    head_on_family,
    head_on_script,
    oracle_suite,
    realized_criticality,
    run,
    stopping_script,
)
from scenegen.scenario import graph_to_script

R = Relation


def test_policies():
    assert set(POLICIES) == {"normal", "cautious", "aggressive"}
    assert POLICIES["cautious"].ttc_threshold > POLICIES["normal"].ttc_threshold > POLICIES["aggressive"].ttc_threshold
    assert get_policy("normal", {"target_speed": 5.0}).target_speed == 5.0
    with pytest.raises(PlaybackError):
        get_policy("reckless")
    with pytest.raises(PlaybackError):
        EgoPolicy("bad", 0.0, 1.0, 1.0)


def test_realized_criticality():
    assert realized_criticality(math.inf, False) is R.VISIBLE
    assert realized_criticality(0.5, True) is R.NEAR_COLLISION
    assert realized_criticality(7.0, False) is R.NEAR
    assert realized_criticality(12.0, False) is R.VISIBLE


def test_empty_scene():
    s = replace(following_script(10.0), actors=[])
    r = run(s)
    assert math.isinf(r.min_distance) and r.realized is R.VISIBLE and not r.collision
    assert r.to_json()["min_distance"] is None


def test_head_on_without_braking_collides():
    never = EgoPolicy("test", 8.0, math.inf, 3.0)
    r = run(head_on_script(60.0, 8.0), never)
    assert r.collision and r.realized is R.NEAR_COLLISION


def test_following_gap_is_constant():
    for gap in (3.0, 7.0, 18.0):
        assert run(following_script(gap)).min_distance == pytest.approx(gap, abs=1e-9)


def test_stop_distance_closed_form():
    # 8 m/s until the stop takes over at the first step past 2 tau (t = 4.2 s),
    # then 3 m/s^2 in 0.05 s steps: speeds 8 - 0.15k for k = 1..53
    travelled = 84 * 8.0 * 0.05 + 0.05 * sum(8.0 - 0.15 * k for k in range(1, 54))
    r = run(stopping_script(59.0))
    assert r.min_distance == pytest.approx(59.0 - travelled, abs=1e-9)
    assert r.realized is R.VISIBLE


def test_stopping_batch_is_visible():
    scripts = [stopping_script(d) for d in (55.0, 59.0, 65.0, 80.0)]
    rep, results = batch_consistency(scripts)
    assert rep.per_group == {"Visible": 100.0}
    assert all(r.min_distance >= 10.0 for r in results)


def test_oracle_suite_per_group():
    rep, results = batch_consistency(oracle_suite(), "normal")
    assert rep.per_group == {"NearCollision": 100.0, "Near": 100.0, "Visible": 100.0}
    gaps = [s.actors[0].spawn[1] for s in oracle_suite()]
    assert [r.min_distance for r in results] == pytest.approx(gaps, abs=1e-9)


def test_slower_policy_never_closes_a_follower_gap():
    r = run(following_script(4.0), "cautious")
    assert r.min_distance == pytest.approx(4.0, abs=1e-9)


def test_determinism_and_csv():
    s = head_on_script(80.0, 8.0, 2)
    a, b = run(s, "normal"), run(s, "normal")
    assert a.trajectory_csv() == b.trajectory_csv()
    assert a.trajectory_csv().splitlines()[0] == "time,entity,lane,s,y,speed"
    j1 = run(s, rng_seed=4, jitter=0.5)
    j2 = run(s, rng_seed=4, jitter=0.5)
    assert j1.trajectory_csv() == j2.trajectory_csv()
    assert j1.trajectory_csv() != a.trajectory_csv()


def test_head_on_family_monotone():
    fam = head_on_family()
    assert len(fam) == 20
    for s in fam:
        assert run(s, "cautious", record=False).min_distance >= run(s, "aggressive", record=False).min_distance


def test_bad_arguments():
    with pytest.raises(PlaybackError):
        run(following_script(5.0), dt=0.0)
    bad = following_script(5.0)
    bad.actors[0].lanes = (42,) * 5
    with pytest.raises(PlaybackError, match="42"):
        run(bad)
    with pytest.raises(PlaybackError):
        batch_consistency([])


@given(st.floats(1.5, 60.0))
def test_follower_realizes_its_gap_bucket(gap):
    s = following_script(gap)
    assert run(s, record=False).realized is s.criticality


@settings(max_examples=20)
@given(st.floats(60.0, 150.0), st.sampled_from([4.0, 6.0, 8.0]))
def test_min_distance_never_exceeds_initial_gap(gap, v):
    r = run(head_on_script(gap, v, 1), "normal", record=False)
    assert 0.0 <= r.min_distance <= gap


def test_compiled_scripts_play(corpus):
    pairs = [(graph_to_script(g), g.criticality) for g in corpus[:30]]
    rep, results = batch_consistency(pairs, "normal")
    assert len(results) == 30
    assert 0.0 <= rep.overall <= 100.0
