import json
import logging
import xml.etree.ElementTree as ET

import pytest
from hypothesis import given, settings, strategies as st

from scenegen import model as M
from scenegen.graph import Edge, SeedDatabase, prune_to_seed, scenario_from_annotations
from scenegen.ingest import EntityAnnotation, FrameAnnotation, SynthConfig, generate_synthetic
from scenegen.ontology import PROXIMITY, NodeClass, Relation
from scenegen.scenario import (
    DEFAULT_BANDS,
    CompilationError,
    ScenarioError,
    ScenarioRequest,
    ScenarioScript,
    agent_pool_from,
    default_lanes,
    emit_openscenario,
    evenly_distributed_requests,
    graph_to_script,
    handle_request,
    mirror,
    planned_ego_speeds,
    validate_openscenario,
)

R = Relation


def _graph(entities_per_tau, av=R.AV_MOVE):
    frames = [FrameAnnotation(t, av, (NodeClass.VEHICLE_LANE, 0), tuple(entities_per_tau(t))) for t in range(5)]
    return scenario_from_annotations(frames)


def _cyclist(t):
    return [EntityAnnotation(1, NodeClass.CYCLIST, NodeClass.INCOMING_CYCLE_LANE, 0,
                             (R.MOVE, R.MOVING_TOWARDS), None, 30.0 - 6.5 * t)]


def test_oncoming_cyclist():
    g = _graph(_cyclist)
    s = graph_to_script(g)
    (a,) = s.actors
    assert a.heading == "oncoming" and s.lane(a.spawn[0]).location is NodeClass.INCOMING_CYCLE_LANE
    assert a.lane_changes() == []
    assert s.ego_lanes == (2,) * 5


def test_near_collision_offsets(corpus):
    for g in corpus:
        if g.criticality is R.NEAR_COLLISION:
            s = graph_to_script(g)
            assert all(abs(a.spawn[1]) == DEFAULT_BANDS[R.NEAR_COLLISION] for a in s.actors)


def test_bands_are_configurable_and_checked(corpus):
    g = corpus[0]
    bands = {R.NEAR_COLLISION: 3.0, R.NEAR: 9.0, R.VISIBLE: 25.0}
    s = graph_to_script(g, bands)
    assert all(abs(a.spawn[1]) == bands[g.criticality] for a in s.actors)
    with pytest.raises(CompilationError):
        graph_to_script(g, {R.NEAR_COLLISION: 9.0, R.NEAR: 8.0, R.VISIBLE: 20.0})


def test_actor_without_location_is_named():
    g = _graph(_cyclist)
    lane_edges = tuple(e for e in g.edges if not (e.src == 1 and e.relation is R.IS_IN))
    from dataclasses import replace

    with pytest.raises(CompilationError, match="Cyclist 1"):
        graph_to_script(replace(g, edges=lane_edges))


def test_lane_change_recorded():
    def car(t):
        loc = NodeClass.VEHICLE_LANE if t < 3 else NodeClass.OUTGOING_LANE
        return [EntityAnnotation(1, NodeClass.CAR, loc, 0, (R.MOVE, R.MOVING_AWAY), None, 12.0)]

    (a,) = graph_to_script(_graph(car)).actors
    assert a.lane_changes() == [(3, 1)]
    assert a.spawn[0] == 2 and a.goal[0] == 1


def test_traffic_light_becomes_signal():
    def ents(t):
        return [EntityAnnotation(1, NodeClass.CAR, NodeClass.VEHICLE_LANE, 0, (R.STOP,), None, 15.0),
                EntityAnnotation(2, NodeClass.TRAFFIC_LIGHT, light=R.RED if t < 3 else R.GREEN, distance_m=20.0)]

    s = graph_to_script(_graph(ents))
    assert len(s.actors) == 1 and len(s.signals) == 1
    assert s.signals[0].states == (R.RED, R.RED, R.RED, R.GREEN, R.GREEN)


def test_mirror(corpus):
    s = graph_to_script(corpus[3])
    assert mirror(mirror(s)) == s
    turn = graph_to_script(_graph(_cyclist, av=R.AV_TURN_RIGHT))
    m = mirror(turn)
    assert m.av_action is R.AV_TURN_LEFT and m.handedness == "right"
    assert m.lane(-1).location is NodeClass.OUTGOING_LANE
    assert m.actors[0].spawn[0] == -turn.actors[0].spawn[0]
    assert graph_to_script(corpus[3], handedness="right") == mirror(s)


def test_ego_speed_plan():
    assert planned_ego_speeds(R.AV_STOP, 8.0) == [8.0, 8.0, 0.0, 0.0, 0.0]
    assert planned_ego_speeds(R.AV_OVERTAKE, 8.0) == [8.0, 8.0, 10.0, 10.0, 10.0]
    assert planned_ego_speeds(R.AV_TURN_LEFT, 8.0)[-1] == 4.0


def test_script_json_round_trip(corpus):
    for g in corpus[:15]:
        s = graph_to_script(g)
        assert ScenarioScript.from_json(json.loads(json.dumps(s.to_json()))) == s


def test_script_validation():
    s = graph_to_script(_graph(_cyclist))
    doc = s.to_json()
    doc["actors"][0]["lanes"] = [99] * 5
    with pytest.raises(ScenarioError, match="99"):
        ScenarioScript.from_json(doc)


def test_emitter_basics():
    s = graph_to_script(_graph(_cyclist))
    xml = emit_openscenario(s)
    root = ET.fromstring(xml)
    assert len(root.findall("./Entities/ScenarioObject")) == 2
    assert validate_openscenario(xml) == []
    assert emit_openscenario(s) == xml
    assert validate_openscenario(xml.replace("<Storyboard>", "<Storyboard><Bogus/>")) != []


def test_emitter_lane_change_event():
    def car(t):
        loc = NodeClass.VEHICLE_LANE if t < 3 else NodeClass.OUTGOING_LANE
        return [EntityAnnotation(1, NodeClass.CAR, loc, 0, (R.MOVE, R.MOVING_AWAY), None, 12.0)]

    xml = emit_openscenario(graph_to_script(_graph(car)))
    assert 'name="car_1_lane_change_3"' in xml and validate_openscenario(xml) == []


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_emitted_scripts_always_validate(seed):
    frames = generate_synthetic(SynthConfig(n_scenarios=1, rng_seed=seed, max_agents=4))[0]
    g = scenario_from_annotations(frames)
    for hand in ("left", "right"):
        assert validate_openscenario(emit_openscenario(graph_to_script(g, handedness=hand))) == []


# ---------------------------------------------------------------- requests


def test_request_parsing():
    req = ScenarioRequest.from_json({"agents": ["Car"], "av_action": "AV-Stop", "criticality": "NearCollision"})
    assert req.agents == (NodeClass.CAR,) and req.rng_seed == 0
    assert ScenarioRequest.from_json(json.dumps(req.to_json())) == req
    with pytest.raises(ScenarioError, match="unknown"):
        ScenarioRequest.from_json({**req.to_json(), "color": "red"})
    with pytest.raises(ScenarioError):
        ScenarioRequest((NodeClass.VEHICLE_LANE,), R.AV_STOP, R.NEAR)
    with pytest.raises(ScenarioError):
        ScenarioRequest((NodeClass.CAR,), R.MOVE, R.NEAR)
    with pytest.raises(ScenarioError):
        ScenarioRequest((), R.AV_STOP, R.NEAR)


@pytest.fixture(scope="module")
def db(corpus):
    d = SeedDatabase()
    for g in corpus:
        d.insert(prune_to_seed(g, keep_conditioning=False))
    return d


def test_handle_request(db):
    cfg = M.ModelConfig()
    params = M.init_params(cfg)
    req = ScenarioRequest((NodeClass.CAR,), R.AV_STOP, R.NEAR_COLLISION, rng_seed=3)
    out = handle_request(req, db, params, cfg)
    crit = [n for n in out.nodes if n.cls is NodeClass.CRIT_NEAR_COLLISION]
    assert len(crit) == 1
    assert Edge(0, 0, R.AV_STOP, 0) in out.edges
    assert handle_request(req, db, params, cfg) == out


def test_two_pedestrians_stay_distinct(db):
    cfg = M.ModelConfig()
    req = ScenarioRequest((NodeClass.PEDESTRIAN, NodeClass.PEDESTRIAN), R.AV_MOVE, R.NEAR)
    out = handle_request(req, db, M.init_params(cfg), cfg)
    peds = [n for n in out.nodes if n.cls is NodeClass.PEDESTRIAN]
    assert len(peds) >= 2 and len({n.track for n in peds}) == len(peds)


def test_unseen_combination_warns(db, caplog):
    cfg = M.ModelConfig()
    req = ScenarioRequest((NodeClass.BUS,) * 4, R.AV_MOVE, R.VISIBLE)
    with caplog.at_level(logging.WARNING):
        handle_request(req, db, M.init_params(cfg), cfg)
    assert "closest agent multiset" in caplog.text


def test_even_requests(corpus):
    pool = agent_pool_from(corpus)
    reqs = evenly_distributed_requests(30, pool, rng_seed=1)
    counts = {c: sum(r.criticality is c for r in reqs) for c in PROXIMITY}
    assert set(counts.values()) == {10}
    assert reqs == evenly_distributed_requests(30, pool, rng_seed=1)


def test_default_lane_ids_unique():
    ids = [ln.id for ln in default_lanes()]
    assert len(ids) == len(set(ids))
