"""Traffic-domain ontology: node classes, relation types and the triplet schema.

The default table is built in code; :func:`load_ontology` accepts a JSON file
with the same schema to override it (keys ``node_classes``, ``relations``,
``triplets``, ``exclusion_groups``, ``severity_order``).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable


class OntologyError(ValueError):
    """Raised for unknown labels or schema violations."""


class NodeClass(enum.Enum):
    EGO = "EGO"
    PEDESTRIAN = "Pedestrian"
    CAR = "Car"
    CYCLIST = "Cyclist"
    MOTORBIKE = "Motorbike"
    BUS = "Bus"
    TRAFFIC_LIGHT = "TrafficLight"
    VEHICLE_LANE = "VehicleLane"
    OUTGOING_LANE = "OutgoingLane"
    OUTGOING_CYCLE_LANE = "OutgoingCycleLane"
    INCOMING_LANE = "IncomingLane"
    INCOMING_CYCLE_LANE = "IncomingCycleLane"
    PAVEMENT = "Pavement"
    JUNCTION = "Junction"
    PEDESTRIAN_CROSSING = "PedestrianCrossing"
    BUS_STOP = "BusStop"
    PARKING = "Parking"
    CRIT_NEAR_COLLISION = "NearCollision"
    CRIT_NEAR = "Near"
    CRIT_VISIBLE = "Visible"

    @classmethod
    def parse(cls, label: str) -> "NodeClass":
        try:
            return cls(label)
        except ValueError:
            raise OntologyError(f"unknown node class {label!r}") from None


class Relation(enum.Enum):
    IS_IN = "IsIn"
    MOVE = "Move"
    BRAKE = "Brake"
    STOP = "Stop"
    INDICATE_LEFT = "IndicateLeft"
    INDICATE_RIGHT = "IndicateRight"
    TURN_LEFT = "TurnLeft"
    TURN_RIGHT = "TurnRight"
    CROSS = "Cross"
    RED = "Red"
    AMBER = "Amber"
    GREEN = "Green"
    MOVING_AWAY = "MovingAway"
    MOVING_TOWARDS = "MovingTowards"
    MUST_STOP = "MustStop"
    NEAR_COLLISION = "NearCollision"
    NEAR = "Near"
    VISIBLE = "Visible"
    AV_MOVE = "AV-Move"
    AV_MOVE_LEFT = "AV-MoveLeft"
    AV_MOVE_RIGHT = "AV-MoveRight"
    AV_OVERTAKE = "AV-Overtake"
    AV_STOP = "AV-Stop"
    AV_TURN_LEFT = "AV-TurnLeft"
    AV_TURN_RIGHT = "AV-TurnRight"
    CRITICALITY_LINK = "CriticalityLink"

    @classmethod
    def parse(cls, label: str) -> "Relation":
        try:
            return cls(label)
        except ValueError:
            raise OntologyError(f"unknown relation {label!r}") from None


MOVABLE_AGENTS = frozenset(
    {NodeClass.PEDESTRIAN, NodeClass.CAR, NodeClass.CYCLIST, NodeClass.MOTORBIKE, NodeClass.BUS}
)
VEHICLES = frozenset({NodeClass.CAR, NodeClass.CYCLIST, NodeClass.MOTORBIKE, NodeClass.BUS})
AGENTS = MOVABLE_AGENTS | {NodeClass.EGO, NodeClass.TRAFFIC_LIGHT}
LOCATIONS = frozenset(
    {
        NodeClass.VEHICLE_LANE,
        NodeClass.OUTGOING_LANE,
        NodeClass.OUTGOING_CYCLE_LANE,
        NodeClass.INCOMING_LANE,
        NodeClass.INCOMING_CYCLE_LANE,
        NodeClass.PAVEMENT,
        NodeClass.JUNCTION,
        NodeClass.PEDESTRIAN_CROSSING,
        NodeClass.BUS_STOP,
        NodeClass.PARKING,
    }
)
CRITICALITY_CLASSES = frozenset(
    {NodeClass.CRIT_NEAR_COLLISION, NodeClass.CRIT_NEAR, NodeClass.CRIT_VISIBLE}
)

AGENT_ACTIONS = (
    Relation.MOVE,
    Relation.BRAKE,
    Relation.STOP,
    Relation.INDICATE_LEFT,
    Relation.INDICATE_RIGHT,
    Relation.TURN_LEFT,
    Relation.TURN_RIGHT,
    Relation.CROSS,
)
LIGHT_STATES = (Relation.RED, Relation.AMBER, Relation.GREEN)
RELATIVE_MOTION = (Relation.MOVING_AWAY, Relation.MOVING_TOWARDS)
PROXIMITY = (Relation.NEAR_COLLISION, Relation.NEAR, Relation.VISIBLE)
AV_ACTIONS = (
    Relation.AV_MOVE,
    Relation.AV_MOVE_LEFT,
    Relation.AV_MOVE_RIGHT,
    Relation.AV_OVERTAKE,
    Relation.AV_STOP,
    Relation.AV_TURN_LEFT,
    Relation.AV_TURN_RIGHT,
)
# relations whose subject and object are the same node
SELF_RELATIONS = frozenset(AGENT_ACTIONS + LIGHT_STATES + AV_ACTIONS)

CRITICALITY_TO_CLASS = {
    Relation.NEAR_COLLISION: NodeClass.CRIT_NEAR_COLLISION,
    Relation.NEAR: NodeClass.CRIT_NEAR,
    Relation.VISIBLE: NodeClass.CRIT_VISIBLE,
}
CLASS_TO_CRITICALITY = {v: k for k, v in CRITICALITY_TO_CLASS.items()}


def _default_triplets() -> set[tuple[NodeClass, Relation, NodeClass]]:
    t: set[tuple[NodeClass, Relation, NodeClass]] = set()
    for a in MOVABLE_AGENTS | {NodeClass.EGO}:
        for loc in LOCATIONS:
            t.add((a, Relation.IS_IN, loc))
    for a in MOVABLE_AGENTS:
        for r in AGENT_ACTIONS:
            t.add((a, r, a))
        for r in RELATIVE_MOTION:
            t.add((a, r, NodeClass.EGO))
    for a in MOVABLE_AGENTS | {NodeClass.TRAFFIC_LIGHT}:
        for r in PROXIMITY:
            t.add((a, r, NodeClass.EGO))
    for a in VEHICLES:
        t.add((a, Relation.MUST_STOP, NodeClass.TRAFFIC_LIGHT))
    for r in LIGHT_STATES:
        t.add((NodeClass.TRAFFIC_LIGHT, r, NodeClass.TRAFFIC_LIGHT))
    for r in AV_ACTIONS:
        t.add((NodeClass.EGO, r, NodeClass.EGO))
    for c in CRITICALITY_CLASSES:
        t.add((c, Relation.CRITICALITY_LINK, NodeClass.EGO))
    return t


@dataclass(frozen=True)
class Ontology:
    node_classes: tuple[NodeClass, ...]
    relations: tuple[Relation, ...]
    triplets: frozenset[tuple[NodeClass, Relation, NodeClass]]
    exclusion_groups: dict[str, tuple[Relation, ...]]
    severity_order: tuple[Relation, ...]  # least severe first
    _rel_index: dict[Relation, int] = field(init=False, repr=False, compare=False)
    _cls_index: dict[NodeClass, int] = field(init=False, repr=False, compare=False)
    _group_of: dict[Relation, str] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.node_classes)) != len(NodeClass) or len(self.node_classes) != len(NodeClass):
            raise OntologyError("node_classes must list each of the 20 classes exactly once")
        if len(set(self.relations)) != len(Relation) or len(self.relations) != len(Relation):
            raise OntologyError("relations must list each of the 26 relations exactly once")
        group_of: dict[Relation, str] = {}
        for name, rels in self.exclusion_groups.items():
            for r in rels:
                if r in group_of:
                    raise OntologyError(f"{r.value} appears in groups {group_of[r]!r} and {name!r}")
                group_of[r] = name
        for required in ("relative_motion", "proximity"):
            if required not in self.exclusion_groups:
                raise OntologyError(f"exclusion group {required!r} is mandatory")
        if sorted(self.severity_order, key=lambda r: r.value) != sorted(PROXIMITY, key=lambda r: r.value):
            raise OntologyError("severity_order must be a permutation of the proximity relations")
        object.__setattr__(self, "_rel_index", {r: i for i, r in enumerate(self.relations)})
        object.__setattr__(self, "_cls_index", {c: i for i, c in enumerate(self.node_classes)})
        object.__setattr__(self, "_group_of", group_of)

    def relation_index(self, r: Relation) -> int:
        return self._rel_index[r]

    def class_index(self, c: NodeClass) -> int:
        return self._cls_index[c]

    def validate_triplet(self, subject: NodeClass, relation: Relation, obj: NodeClass) -> bool:
        return (subject, relation, obj) in self.triplets

    def exclusion_group(self, r: Relation) -> str | None:
        return self._group_of.get(r)

    def ego_candidate_relations(self, obj: NodeClass) -> frozenset[Relation]:
        """Relations the model may predict between the ego and a node of class ``obj``."""
        if obj is NodeClass.EGO:
            raise OntologyError("the ego cannot be the object of an ego candidate")
        if obj in CRITICALITY_CLASSES:
            return frozenset()
        out = set()
        for r in RELATIVE_MOTION + PROXIMITY + (Relation.IS_IN,):
            if self.validate_triplet(obj, r, NodeClass.EGO) or self.validate_triplet(NodeClass.EGO, r, obj):
                out.add(r)
        return frozenset(out)

    def severity_rank(self, c: Relation) -> int:
        try:
            return self.severity_order.index(c)
        except ValueError:
            raise OntologyError(f"{c} is not a criticality level") from None

    def most_severe(self, levels: Iterable[Relation]) -> Relation:
        return max(levels, key=self.severity_rank)

    def to_json(self) -> dict:
        return {
            "node_classes": [c.value for c in self.node_classes],
            "relations": [r.value for r in self.relations],
            "triplets": sorted([s.value, r.value, o.value] for s, r, o in self.triplets),
            "exclusion_groups": {k: [r.value for r in v] for k, v in self.exclusion_groups.items()},
            "severity_order": [r.value for r in self.severity_order],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Ontology":
        missing = {"node_classes", "relations", "triplets", "exclusion_groups", "severity_order"} - set(doc)
        if missing:
            raise OntologyError(f"ontology file lacks keys {sorted(missing)}")
        return cls(
            node_classes=tuple(NodeClass.parse(x) for x in doc["node_classes"]),
            relations=tuple(Relation.parse(x) for x in doc["relations"]),
            triplets=frozenset(
                (NodeClass.parse(s), Relation.parse(r), NodeClass.parse(o)) for s, r, o in doc["triplets"]
            ),
            exclusion_groups={
                k: tuple(Relation.parse(x) for x in v) for k, v in doc["exclusion_groups"].items()
            },
            severity_order=tuple(Relation.parse(x) for x in doc["severity_order"]),
        )


@lru_cache(maxsize=None)
def default_ontology() -> Ontology:
    return Ontology(
        node_classes=tuple(NodeClass),
        relations=tuple(Relation),
        triplets=frozenset(_default_triplets()),
        exclusion_groups={
            "relative_motion": RELATIVE_MOTION,
            "proximity": PROXIMITY,
            "traffic_light_state": LIGHT_STATES,
            "av_action": AV_ACTIONS,
        },
        severity_order=(Relation.VISIBLE, Relation.NEAR, Relation.NEAR_COLLISION),
    )


def load_ontology(path: str | Path | None = None) -> Ontology:
    if path is None:
        return default_ontology()
    with open(path, encoding="utf-8") as fh:
        return Ontology.from_json(json.load(fh))


def relation_vocabulary(ont: Ontology | None = None) -> list[Relation]:
    return list((ont or default_ontology()).relations)


def severity_rank(c: Relation, ont: Ontology | None = None) -> int:
    return (ont or default_ontology()).severity_rank(c)
