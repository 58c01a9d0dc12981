import pytest
from hypothesis import given, strategies as st

from scenegen.ontology import (
    AV_ACTIONS,
    LOCATIONS,
    MOVABLE_AGENTS,
    PROXIMITY,
    SELF_RELATIONS,
    NodeClass,
    Ontology,
    OntologyError,
    Relation,
    default_ontology,
    load_ontology,
    relation_vocabulary,
    severity_rank,
)

ONT = default_ontology()


def test_vocabulary_has_26_relations_in_stable_order():
    voc = relation_vocabulary()
    assert len(voc) == 26
    assert Relation.MUST_STOP in voc
    assert voc.index(Relation.IS_IN) == relation_vocabulary().index(Relation.IS_IN)


def test_twenty_node_classes():
    assert len(ONT.node_classes) == 20


@pytest.mark.parametrize(
    "s,r,o,ok",
    [
        (NodeClass.CAR, Relation.IS_IN, NodeClass.VEHICLE_LANE, True),
        (NodeClass.PEDESTRIAN, Relation.MOVING_TOWARDS, NodeClass.EGO, True),
        (NodeClass.VEHICLE_LANE, Relation.MOVE, NodeClass.CAR, False),
        (NodeClass.CAR, Relation.MUST_STOP, NodeClass.TRAFFIC_LIGHT, True),
        (NodeClass.PEDESTRIAN, Relation.MUST_STOP, NodeClass.TRAFFIC_LIGHT, False),
        (NodeClass.EGO, Relation.AV_STOP, NodeClass.EGO, True),
        (NodeClass.CRIT_NEAR, Relation.CRITICALITY_LINK, NodeClass.EGO, True),
    ],
)
def test_validate_triplet(s, r, o, ok):
    assert ONT.validate_triplet(s, r, o) is ok


def test_ego_candidate_relations():
    assert ONT.ego_candidate_relations(NodeClass.PEDESTRIAN) == {
        Relation.MOVING_AWAY, Relation.MOVING_TOWARDS, *PROXIMITY
    }
    assert ONT.ego_candidate_relations(NodeClass.VEHICLE_LANE) == {Relation.IS_IN}
    assert ONT.ego_candidate_relations(NodeClass.CRIT_NEAR) == frozenset()
    # traffic lights relate to the ego through proximity only
    assert ONT.ego_candidate_relations(NodeClass.TRAFFIC_LIGHT) == set(PROXIMITY)


def test_severity_order():
    assert severity_rank(Relation.NEAR_COLLISION) == 2
    assert severity_rank(Relation.VISIBLE) == 0
    assert ONT.most_severe([Relation.VISIBLE, Relation.NEAR]) is Relation.NEAR
    with pytest.raises(OntologyError):
        severity_rank(Relation.MOVE)


def test_exclusion_groups():
    assert ONT.exclusion_group(Relation.NEAR) == ONT.exclusion_group(Relation.VISIBLE)
    assert ONT.exclusion_group(Relation.MOVING_AWAY) == ONT.exclusion_group(Relation.MOVING_TOWARDS)
    assert ONT.exclusion_group(Relation.NEAR) != ONT.exclusion_group(Relation.MOVING_AWAY)
    assert ONT.exclusion_group(Relation.IS_IN) is None


def test_parse_unknown_labels():
    with pytest.raises(OntologyError, match="Lorry"):
        NodeClass.parse("Lorry")
    with pytest.raises(OntologyError):
        Relation.parse("Hover")


def test_json_round_trip(tmp_path):
    doc = ONT.to_json()
    assert Ontology.from_json(doc) == ONT
    p = tmp_path / "ont.json"
    import json

    p.write_text(json.dumps(doc))
    assert load_ontology(p) == ONT


def test_self_relations_only_on_self_loops():
    for s, r, o in ONT.triplets:
        if r in SELF_RELATIONS:
            assert s is o


@given(st.sampled_from(sorted(MOVABLE_AGENTS | LOCATIONS | {NodeClass.TRAFFIC_LIGHT}, key=lambda c: c.value)))
def test_every_ego_candidate_is_valid_in_some_orientation(cls):
    for r in ONT.ego_candidate_relations(cls):
        assert ONT.validate_triplet(NodeClass.EGO, r, cls) or ONT.validate_triplet(cls, r, NodeClass.EGO)
        assert r not in AV_ACTIONS and r is not Relation.CRITICALITY_LINK


@given(st.lists(st.sampled_from(PROXIMITY), min_size=1))
def test_most_severe_is_max_rank(levels):
    assert severity_rank(ONT.most_severe(levels)) == max(severity_rank(x) for x in levels)
