"""On-demand scenario requests, graph-to-script compilation and
OpenSCENARIO-subset emission."""

from __future__ import annotations

import json
import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Iterable, Sequence

from scenegen.graph import (
    N_FRAMES,
    Flavor,
    GraphError,
    SeedDatabase,
    TemporalGraph,
    condition_seed,
    validate_graph,
)
from scenegen.ingest import proximity_from_distance
from scenegen.ontology import (
    AV_ACTIONS,
    LOCATIONS,
    MOVABLE_AGENTS,
    PROXIMITY,
    NodeClass,
    Relation,
)

log = logging.getLogger(__name__)

TAU_SECONDS = 2.083  # 5 frames at 12 fps after 5-fold downsampling
DEFAULT_BANDS = {Relation.NEAR_COLLISION: 4.0, Relation.NEAR: 8.0, Relation.VISIBLE: 20.0}
NOMINAL_EGO_SPEED = 8.0
EGO_SWITCH_TAU = 2  # the requested AV action takes over from this step
HORIZON_S = 15.0

SAME, ONCOMING, CROSSING = "same-direction", "oncoming", "crossing"

# cruise speed (m/s) and upper bound per class
CLASS_SPEED = {
    NodeClass.CAR: (8.0, 14.0),
    NodeClass.BUS: (7.0, 12.0),
    NodeClass.MOTORBIKE: (9.0, 16.0),
    NodeClass.CYCLIST: (4.5, 8.0),
    NodeClass.PEDESTRIAN: (1.4, 2.5),
}

_MIRROR_RELATIONS = {
    Relation.TURN_LEFT: Relation.TURN_RIGHT,
    Relation.INDICATE_LEFT: Relation.INDICATE_RIGHT,
    Relation.AV_MOVE_LEFT: Relation.AV_MOVE_RIGHT,
    Relation.AV_TURN_LEFT: Relation.AV_TURN_RIGHT,
}
_MIRROR_RELATIONS.update({v: k for k, v in list(_MIRROR_RELATIONS.items())})

# precedence when an agent carries several action self-loops at one step
_ACTION_PRIORITY = (
    Relation.STOP,
    Relation.BRAKE,
    Relation.CROSS,
    Relation.TURN_LEFT,
    Relation.TURN_RIGHT,
    Relation.MOVE,
    Relation.INDICATE_LEFT,
    Relation.INDICATE_RIGHT,
)


class ScenarioError(ValueError):
    pass


class CompilationError(ScenarioError):
    pass


# --------------------------------------------------------------------------
# requests


@dataclass(frozen=True)
class ScenarioRequest:
    agents: tuple[NodeClass, ...]
    av_action: Relation
    criticality: Relation
    rng_seed: int = 0

    def __post_init__(self):
        if not self.agents:
            raise ScenarioError("a request needs at least one agent")
        for a in self.agents:
            if a is NodeClass.EGO or a in LOCATIONS or a not in MOVABLE_AGENTS | {NodeClass.TRAFFIC_LIGHT}:
                raise ScenarioError(f"{a.value} cannot be requested as an agent")
        if self.av_action not in AV_ACTIONS:
            raise ScenarioError(f"{self.av_action.value} is not an AV action")
        if self.criticality not in PROXIMITY:
            raise ScenarioError(f"{self.criticality.value} is not a criticality level")

    @classmethod
    def from_json(cls, doc: dict | str) -> "ScenarioRequest":
        if isinstance(doc, str):
            doc = json.loads(doc)
        unknown = set(doc) - {"agents", "av_action", "criticality", "seed"}
        if unknown:
            raise ScenarioError(f"unknown request keys {sorted(unknown)}")
        try:
            return cls(
                agents=tuple(NodeClass.parse(a) for a in doc["agents"]),
                av_action=Relation.parse(doc["av_action"]),
                criticality=Relation.parse(doc["criticality"]),
                rng_seed=int(doc.get("seed", 0)),
            )
        except KeyError as exc:
            raise ScenarioError(f"request lacks {exc.args[0]!r}") from None

    def to_json(self) -> dict:
        return {
            "agents": [a.value for a in self.agents],
            "av_action": self.av_action.value,
            "criticality": self.criticality.value,
            "seed": self.rng_seed,
        }


def handle_request(req: ScenarioRequest, db: SeedDatabase, params, cfg, ont=None) -> TemporalGraph:
    """Sample a database seed for the requested agents, reattach the requested
    conditioning and predict the scenario graph."""
    from scenegen.model import predict

    if len(db) == 0:
        raise ScenarioError("seed database is empty")
    db_seed, rule = db.match(req.agents, req.rng_seed)
    if rule == "jaccard":
        log.warning("no seed contains %s; using the closest agent multiset instead",
                    "+".join(sorted(a.value for a in req.agents)))
    seed = condition_seed(db_seed, req.av_action, req.criticality)
    out = predict(params, seed, cfg, ont)
    validate_graph(out, ont)
    assert out.av_action is req.av_action and out.criticality is req.criticality
    return out


# --------------------------------------------------------------------------
# map and script


@dataclass(frozen=True)
class Lane:
    id: int
    location: NodeClass
    y: float  # lateral centre, positive to the ego's left
    width: float
    direction: str  # same-direction | oncoming | crossing


def default_lanes() -> tuple[Lane, ...]:
    """Left-hand traffic: same-direction lanes left of the centre line."""
    return (
        Lane(1, NodeClass.OUTGOING_LANE, 1.5, 3.0, SAME),
        Lane(2, NodeClass.VEHICLE_LANE, 4.5, 3.0, SAME),
        Lane(3, NodeClass.OUTGOING_CYCLE_LANE, 6.75, 1.5, SAME),
        Lane(4, NodeClass.PAVEMENT, 9.5, 2.5, SAME),
        Lane(5, NodeClass.BUS_STOP, 7.5, 3.0, SAME),
        Lane(6, NodeClass.PARKING, 7.5, 2.5, SAME),
        Lane(7, NodeClass.PEDESTRIAN_CROSSING, 4.5, 4.0, CROSSING),
        Lane(8, NodeClass.JUNCTION, 4.5, 12.0, CROSSING),
        Lane(-1, NodeClass.INCOMING_LANE, -1.5, 3.0, ONCOMING),
        Lane(-2, NodeClass.INCOMING_CYCLE_LANE, -3.75, 1.5, ONCOMING),
    )


@dataclass
class ActorSpec:
    track_id: int
    cls: NodeClass
    spawn: tuple[int, float]  # (lane id, signed longitudinal offset from the ego)
    goal: tuple[int, float]
    heading: str
    behavior: tuple[Relation | None, ...]  # per-tau action
    lanes: tuple[int, ...]  # per-tau lane id
    speeds: tuple[float, ...]  # per-tau target speed (m/s, along the heading)
    start_y: float | None = None  # lateral start for crossing actors

    def lane_changes(self) -> list[tuple[int, int]]:
        """(tau, new lane id) for every step whose lane differs from the previous one."""
        return [(t, self.lanes[t]) for t in range(1, len(self.lanes)) if self.lanes[t] != self.lanes[t - 1]]


@dataclass
class Signal:
    track_id: int
    offset: float
    states: tuple[Relation | None, ...]


@dataclass
class ScenarioScript:
    lanes: tuple[Lane, ...]
    ego_lanes: tuple[int, ...]  # per tau
    av_action: Relation
    ego_speed: float
    actors: list[ActorSpec]
    criticality: Relation
    handedness: str = "left"
    signals: list[Signal] = field(default_factory=list)
    tau_seconds: float = TAU_SECONDS
    switch_tau: int = EGO_SWITCH_TAU

    def lane(self, lane_id: int) -> Lane:
        for ln in self.lanes:
            if ln.id == lane_id:
                return ln
        raise ScenarioError(f"lane {lane_id} is not in the map")

    def validate(self) -> None:
        ids = [ln.id for ln in self.lanes]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate lane ids")
        if self.handedness not in ("left", "right"):
            raise ScenarioError(f"bad handedness {self.handedness!r}")
        for lid in self.ego_lanes:
            self.lane(lid)
        for a in self.actors:
            for lid in (a.spawn[0], a.goal[0], *a.lanes):
                self.lane(lid)
            if len(a.behavior) != N_FRAMES or len(a.speeds) != N_FRAMES or len(a.lanes) != N_FRAMES:
                raise ScenarioError(f"actor {a.track_id} timeline is not {N_FRAMES} steps long")
            if any(v < 0 for v in a.speeds):
                raise ScenarioError(f"actor {a.track_id} has a negative speed")

    def to_json(self) -> dict:
        def rel(r):
            return None if r is None else r.value

        return {
            "handedness": self.handedness,
            "tau_seconds": self.tau_seconds,
            "switch_tau": self.switch_tau,
            "criticality": self.criticality.value,
            "av_action": self.av_action.value,
            "ego_speed": self.ego_speed,
            "ego_lanes": list(self.ego_lanes),
            "lanes": [{**asdict(ln), "location": ln.location.value} for ln in self.lanes],
            "actors": [
                {
                    "track_id": a.track_id,
                    "cls": a.cls.value,
                    "spawn": list(a.spawn),
                    "goal": list(a.goal),
                    "heading": a.heading,
                    "behavior": [rel(b) for b in a.behavior],
                    "lanes": list(a.lanes),
                    "speeds": list(a.speeds),
                    "start_y": a.start_y,
                }
                for a in self.actors
            ],
            "signals": [
                {"track_id": s.track_id, "offset": s.offset, "states": [rel(x) for x in s.states]}
                for s in self.signals
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ScenarioScript":
        def rel(v):
            return None if v is None else Relation.parse(v)

        try:
            script = cls(
                lanes=tuple(
                    Lane(int(d["id"]), NodeClass.parse(d["location"]), float(d["y"]), float(d["width"]), d["direction"])
                    for d in doc["lanes"]
                ),
                ego_lanes=tuple(int(x) for x in doc["ego_lanes"]),
                av_action=Relation.parse(doc["av_action"]),
                ego_speed=float(doc["ego_speed"]),
                actors=[
                    ActorSpec(
                        track_id=int(a["track_id"]),
                        cls=NodeClass.parse(a["cls"]),
                        spawn=(int(a["spawn"][0]), float(a["spawn"][1])),
                        goal=(int(a["goal"][0]), float(a["goal"][1])),
                        heading=a["heading"],
                        behavior=tuple(rel(b) for b in a["behavior"]),
                        lanes=tuple(int(x) for x in a["lanes"]),
                        speeds=tuple(float(x) for x in a["speeds"]),
                        start_y=None if a.get("start_y") is None else float(a["start_y"]),
                    )
                    for a in doc["actors"]
                ],
                criticality=Relation.parse(doc["criticality"]),
                handedness=doc.get("handedness", "left"),
                signals=[
                    Signal(int(s["track_id"]), float(s["offset"]), tuple(rel(x) for x in s["states"]))
                    for s in doc.get("signals", [])
                ],
                tau_seconds=float(doc.get("tau_seconds", TAU_SECONDS)),
                switch_tau=int(doc.get("switch_tau", EGO_SWITCH_TAU)),
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ScenarioError(f"malformed script: {exc}") from None
        script.validate()
        return script


# --------------------------------------------------------------------------
# compilation


def _per_tau(edges, pick) -> list:
    out: list = [None] * N_FRAMES
    for e in edges:
        v = pick(e)
        if v is not None and out[e.tau] is None:
            out[e.tau] = v
    return out


# a distance inside each proximity bucket, used as the per-step target
_REPRESENTATIVE = {Relation.NEAR_COLLISION: 3.0, Relation.NEAR: 7.5}


def _representative_distance(level: Relation, bands: dict) -> float:
    return _REPRESENTATIVE.get(level, bands[Relation.VISIBLE])


def planned_ego_speeds(av_action: Relation, ego_speed: float, switch_tau: int = EGO_SWITCH_TAU) -> list[float]:
    """Per-step ego speed the script is written against."""
    out = []
    for t in range(N_FRAMES):
        v = ego_speed
        if t >= switch_tau:
            if av_action is Relation.AV_STOP:
                v = 0.0
            elif av_action in (Relation.AV_TURN_LEFT, Relation.AV_TURN_RIGHT):
                v = min(ego_speed, 4.0)
            elif av_action is Relation.AV_OVERTAKE:
                v = ego_speed + 2.0
        out.append(v)
    return out


@dataclass
class _Plan:
    sign: float
    speeds: list[float]
    goal_offset: float
    min_distance: float


def _plan_actor(cls, heading, lane_ys, ego_ys, start_y, far_y, prox, actions, sign, band, bands,
                ego_plan, dt_tau, horizon) -> _Plan:
    cruise, vmax = CLASS_SPEED[cls]
    h = 1.0 if heading == SAME else -1.0
    if heading == CROSSING:
        walk = 1.4 if cls is NodeClass.PEDESTRIAN else 0.5 * cruise
        speeds = [0.0 if a is Relation.STOP else walk for a in actions]
    else:
        # longitudinal gap per step that puts the actor at its labelled distance
        gaps, d = [sign * band], band
        for t in range(1, N_FRAMES):
            if prox[t] is not None:
                d = _representative_distance(prox[t], bands)
            dy = lane_ys[t] - ego_ys[t]
            gaps.append(sign * math.sqrt(max(d * d - dy * dy, 0.0)))
        speeds = []
        for t in range(N_FRAMES):
            dg = (gaps[t + 1] - gaps[t]) / dt_tau if t + 1 < N_FRAMES else 0.0
            speeds.append(min(max(h * (ego_plan[t] + dg), 0.0), vmax))

    # preview on a coarse grid with the ego on its planned profile
    step = 0.1
    se, sa, ya = 0.0, sign * band, start_y if heading == CROSSING else lane_ys[0]
    best, goal = math.inf, None
    for k in range(int(round(horizon / step)) + 1):
        t = k * step
        tau = min(int(t / dt_tau + 1e-9), N_FRAMES - 1)
        if heading != CROSSING:
            ya = lane_ys[tau]
        best = min(best, math.hypot(sa - se, ya - ego_ys[tau]))
        if goal is None and t >= (N_FRAMES - 1) * dt_tau - 1e-9:
            goal = sa - se
        se += ego_plan[tau] * step
        if heading == CROSSING:
            move = speeds[tau] * step
            ya = far_y if abs(far_y - ya) <= move else ya + math.copysign(move, far_y - ya)
        else:
            sa += h * speeds[tau] * step
    return _Plan(sign, speeds, goal if goal is not None else sa - se, best)


def graph_to_script(g: TemporalGraph, bands: dict | None = None, handedness: str = "left",
                    lanes: Sequence[Lane] | None = None, ego_speed: float = NOMINAL_EGO_SPEED,
                    tau_seconds: float = TAU_SECONDS, horizon: float = HORIZON_S) -> ScenarioScript:
    """Compile a scenario graph into a script.

    Lanes, heading and behaviour come straight from the graph. The ahead/behind
    side follows the relative-motion labels unless a kinematic preview against
    the ego's planned speed shows that only the other side realizes the graph's
    criticality.
    """
    bands = dict(DEFAULT_BANDS if bands is None else bands)
    if not bands[Relation.NEAR_COLLISION] < bands[Relation.NEAR] < bands[Relation.VISIBLE]:
        raise CompilationError("spawn bands must increase with decreasing severity")
    if g.criticality is None or g.av_action is None:
        raise CompilationError("graph carries no criticality or AV action")
    layout = tuple(lanes or default_lanes())
    lane_of = {ln.location: ln for ln in layout}
    lane_by_id = {ln.id: ln for ln in layout}
    ego = g.ego.uid
    band = bands[g.criticality]

    ego_loc = _per_tau(
        [e for e in g.edges if e.src == ego and e.relation is Relation.IS_IN],
        lambda e: g.nodes[e.dst].cls,
    )
    ego_lanes = []
    current = lane_of[NodeClass.VEHICLE_LANE].id
    for loc in ego_loc:
        ln = lane_of.get(loc)
        if ln is not None and ln.direction != CROSSING:
            current = ln.id
        ego_lanes.append(current)
    ego_ys = [lane_by_id[i].y for i in ego_lanes]
    ego_plan = planned_ego_speeds(g.av_action, ego_speed)
    far_y = min(ln.y for ln in layout)

    actors: list[ActorSpec] = []
    signals: list[Signal] = []
    for node in g.nodes:
        if node.cls is NodeClass.TRAFFIC_LIGHT:
            states = _per_tau([e for e in g.edges if e.src == node.uid and e.dst == node.uid], lambda e: e.relation)
            signals.append(Signal(node.track, band, tuple(states)))
            continue
        if node.cls not in MOVABLE_AGENTS:
            continue
        mine = [e for e in g.edges if node.uid in (e.src, e.dst)]
        locs = _per_tau([e for e in mine if e.relation is Relation.IS_IN and e.src == node.uid],
                        lambda e: g.nodes[e.dst].cls)
        seen = [l for l in locs if l is not None]
        if not seen:
            raise CompilationError(f"actor {node.cls.value} {node.track} has no IsIn edge")
        spawn_loc = locs[0] if locs[0] is not None else seen[0]
        goal_loc = locs[-1] if locs[-1] is not None else seen[-1]
        spawn_lane, goal_lane = lane_of[spawn_loc], lane_of[goal_loc]
        lane_seq, moved = [], False
        for t in range(N_FRAMES):
            moved = moved or (t > 0 and locs[t] is goal_loc)
            lane_seq.append(goal_lane.id if moved else spawn_lane.id)

        motion = _per_tau([e for e in mine if e.relation in (Relation.MOVING_AWAY, Relation.MOVING_TOWARDS)],
                          lambda e: e.relation)
        prox = _per_tau([e for e in mine if e.relation in PROXIMITY and ego in (e.src, e.dst)], lambda e: e.relation)
        actions = []
        for t in range(N_FRAMES):
            acts = {e.relation for e in mine if e.src == e.dst == node.uid and e.tau == t}
            actions.append(next((a for a in _ACTION_PRIORITY if a in acts), None))

        heading = spawn_lane.direction
        later_away = any(m is Relation.MOVING_AWAY for m in motion[1:])
        if heading == SAME:
            behind = (motion[0] is Relation.MOVING_TOWARDS and later_away
                      and g.av_action is not Relation.AV_OVERTAKE)
        else:
            behind = motion[0] is Relation.MOVING_AWAY
        preferred = -1.0 if behind else 1.0

        # crossers enter from the kerb on the ego's side
        start_y = spawn_lane.y + spawn_lane.width / 2 + 1.0 if heading == CROSSING else None
        lane_ys = [lane_by_id[i].y for i in lane_seq]
        plans = [
            _plan_actor(node.cls, heading, lane_ys, ego_ys, start_y, far_y, prox, actions, s, band, bands,
                        ego_plan, tau_seconds, horizon)
            for s in (preferred, -preferred)
        ]
        plan = next((p for p in plans if _bucket(p.min_distance) is g.criticality), plans[0])
        actors.append(ActorSpec(
            track_id=node.track,
            cls=node.cls,
            spawn=(spawn_lane.id, plan.sign * band),
            goal=(goal_lane.id, round(plan.goal_offset, 3)),
            heading=heading,
            behavior=tuple(actions),
            lanes=tuple(lane_seq),
            speeds=tuple(round(v, 3) for v in plan.speeds),
            start_y=start_y,
        ))
    script = ScenarioScript(layout, tuple(ego_lanes), g.av_action, ego_speed, actors, g.criticality,
                            "left", signals, tau_seconds)
    script.validate()
    return mirror(script) if handedness == "right" else script


def _bucket(d: float) -> Relation:
    return proximity_from_distance(d) if d > 0 else Relation.NEAR_COLLISION


def mirror(script: ScenarioScript) -> ScenarioScript:
    """Swap handedness: negate lateral geometry and lane ids, flip left/right labels."""
    flip = lambda r: _MIRROR_RELATIONS.get(r, r) if r is not None else None
    return replace(
        script,
        lanes=tuple(replace(ln, id=-ln.id, y=-ln.y) for ln in script.lanes),
        ego_lanes=tuple(-x for x in script.ego_lanes),
        av_action=flip(script.av_action),
        actors=[
            replace(
                a,
                spawn=(-a.spawn[0], a.spawn[1]),
                goal=(-a.goal[0], a.goal[1]),
                behavior=tuple(flip(b) for b in a.behavior),
                lanes=tuple(-x for x in a.lanes),
                start_y=None if a.start_y is None else -a.start_y,
            )
            for a in script.actors
        ],
        handedness="right" if script.handedness == "left" else "left",
    )


# --------------------------------------------------------------------------
# OpenSCENARIO subset


def _f(x: float) -> str:
    return f"{x:.3f}"


def _sub(parent, tag, **attrs):
    return ET.SubElement(parent, tag, {k.rstrip("_"): str(v) for k, v in attrs.items()})


def _category(cls: NodeClass) -> str:
    return {
        NodeClass.CAR: "car",
        NodeClass.BUS: "bus",
        NodeClass.MOTORBIKE: "motorbike",
        NodeClass.CYCLIST: "bicycle",
    }[cls]


def _entity(parent, name: str, cls: NodeClass) -> None:
    obj = _sub(parent, "ScenarioObject", name=name)
    if cls is NodeClass.PEDESTRIAN:
        _sub(obj, "Pedestrian", name=cls.value, model="pedestrian", mass="80.0", pedestrianCategory="pedestrian")
    else:
        _sub(obj, "Vehicle", name=cls.value, vehicleCategory=_category(cls))


def _time_trigger(parent, name: str, t: float) -> None:
    cg = _sub(_sub(parent, "StartTrigger"), "ConditionGroup")
    cond = _sub(cg, "Condition", name=name, delay="0", conditionEdge="rising")
    _sub(_sub(cond, "ByValueCondition"), "SimulationTimeCondition", value=_f(t), rule="greaterThan")


def _speed_action(parent, v: float) -> None:
    sa = _sub(_sub(_sub(parent, "PrivateAction"), "LongitudinalAction"), "SpeedAction")
    _sub(sa, "SpeedActionDynamics", dynamicsShape="linear", value="1.000", dynamicsDimension="time")
    _sub(_sub(sa, "SpeedActionTarget"), "AbsoluteTargetSpeed", value=_f(v))


def _lane_change_action(parent, lane_id: int) -> None:
    lc = _sub(_sub(_sub(parent, "PrivateAction"), "LateralAction"), "LaneChangeAction")
    _sub(lc, "LaneChangeActionDynamics", dynamicsShape="sinusoidal", value="2.000", dynamicsDimension="time")
    _sub(_sub(lc, "LaneChangeTarget"), "AbsoluteTargetLane", value=str(lane_id))


def _init_private(actions, name: str, lane_id: int, s: float, v: float) -> None:
    priv = _sub(actions, "Private", entityRef=name)
    tele = _sub(_sub(priv, "PrivateAction"), "TeleportAction")
    _sub(_sub(tele, "Position"), "LanePosition", roadId="0", laneId=str(lane_id), s=_f(s), offset="0.000")
    _speed_action(priv, v)


def emit_openscenario(script: ScenarioScript, horizon: float = HORIZON_S) -> str:
    """Deterministic XML for the scenario; same script, same bytes."""
    script.validate()
    # s is measured from a reference point behind every spawn
    s0 = 100.0
    root = ET.Element("OpenSCENARIO")
    _sub(root, "FileHeader", revMajor="1", revMinor="0", date="1970-01-01T00:00:00",
         description=f"{script.av_action.value} / {script.criticality.value} / {script.handedness}-hand traffic",
         author="scenegen")
    ents = _sub(root, "Entities")
    _sub(_sub(ents, "ScenarioObject", name="ego"), "Vehicle", name="EGO", vehicleCategory="car")
    names = []
    for a in script.actors:
        name = f"{a.cls.value.lower()}_{a.track_id}"
        names.append(name)
        _entity(ents, name, a.cls)

    sb = _sub(root, "Storyboard")
    acts = _sub(_sub(sb, "Init"), "Actions")
    _init_private(acts, "ego", script.ego_lanes[0], s0, script.ego_speed)
    for name, a in zip(names, script.actors):
        _init_private(acts, name, a.spawn[0], s0 + a.spawn[1], a.speeds[0])

    story = _sub(sb, "Story", name="scenario")
    act = _sub(story, "Act", name="behaviour")
    timelines = [("ego", planned_ego_speeds(script.av_action, script.ego_speed, script.switch_tau), list(script.ego_lanes), [None] * N_FRAMES)]
    timelines += [(n, list(a.speeds), list(a.lanes), list(a.behavior)) for n, a in zip(names, script.actors)]
    for name, speeds, lanes, behavior in timelines:
        mg = _sub(act, "ManeuverGroup", name=f"{name}_group", maximumExecutionCount="1")
        _sub(_sub(mg, "Actors", selectTriggeringEntities="false"), "EntityRef", entityRef=name)
        man = _sub(mg, "Maneuver", name=f"{name}_maneuver")
        for t in range(1, N_FRAMES):
            at = t * script.tau_seconds
            if speeds[t] != speeds[t - 1]:
                kind = "stop" if speeds[t] == 0.0 else "speed"
                ev = _sub(man, "Event", name=f"{name}_{kind}_{t}", priority="overwrite")
                _speed_action(_sub(ev, "Action", name=f"{name}_{kind}_action_{t}"), speeds[t])
                _time_trigger(ev, f"{name}_{kind}_time_{t}", at)
            if lanes[t] != lanes[t - 1]:
                ev = _sub(man, "Event", name=f"{name}_lane_change_{t}", priority="parallel")
                _lane_change_action(_sub(ev, "Action", name=f"{name}_lane_change_action_{t}"), lanes[t])
                _time_trigger(ev, f"{name}_lane_change_time_{t}", at)
        if not len(man):
            # keep the maneuver non-empty: hold the initial speed
            ev = _sub(man, "Event", name=f"{name}_hold", priority="overwrite")
            _speed_action(_sub(ev, "Action", name=f"{name}_hold_action"), speeds[0])
            _time_trigger(ev, f"{name}_hold_time", 0.0)
    _time_trigger(act, "act_start", 0.0)
    stop = _sub(sb, "StopTrigger")
    cond = _sub(_sub(stop, "ConditionGroup"), "Condition", name="horizon", delay="0", conditionEdge="rising")
    _sub(_sub(cond, "ByValueCondition"), "SimulationTimeCondition", value=_f(horizon), rule="greaterThan")

    ET.indent(root, space="  ")
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"


def schema_text() -> str:
    return resources.files("scenegen").joinpath("data/xosc_subset.xsd").read_text(encoding="utf-8")


def validate_openscenario(xml_text: str) -> list[str]:
    """Errors from validating against the bundled subset schema (empty when valid)."""
    from lxml import etree

    schema = etree.XMLSchema(etree.fromstring(schema_text().encode("utf-8")))
    doc = etree.fromstring(xml_text.encode("utf-8"))
    if schema.validate(doc):
        return []
    return [f"line {e.line}: {e.message}" for e in schema.error_log]


def evenly_distributed_requests(n: int, agent_pool: Sequence[Sequence[NodeClass]],
                                rng_seed: int = 0) -> list[ScenarioRequest]:
    """``n`` requests cycling through the criticality levels; agents and AV
    action drawn with a seeded generator."""
    import numpy as np

    rng = np.random.default_rng(rng_seed)
    out = []
    for i in range(n):
        agents = tuple(agent_pool[int(rng.integers(len(agent_pool)))])
        av = AV_ACTIONS[int(rng.integers(len(AV_ACTIONS)))]
        out.append(ScenarioRequest(agents, av, PROXIMITY[i % len(PROXIMITY)], int(rng.integers(2**31))))
    return out


def agent_pool_from(graphs: Iterable[TemporalGraph]) -> list[tuple[NodeClass, ...]]:
    pool = sorted({tuple(sorted((n.cls for n in g.nodes if n.cls in MOVABLE_AGENTS), key=lambda c: c.value))
                   for g in graphs} - {()}, key=lambda t: [c.value for c in t])
    if not pool:
        raise GraphError("no graph contains a movable agent")
    return pool


__all__ = [
    "ActorSpec",
    "CompilationError",
    "Flavor",
    "Lane",
    "ScenarioRequest",
    "ScenarioScript",
    "Signal",
    "default_lanes",
    "emit_openscenario",
    "graph_to_script",
    "handle_request",
    "mirror",
    "validate_openscenario",
]
