"""Frame annotations: parsing, proximity thresholds, windowing, splits and a
procedural generator for synthetic scenario corpora.

Annotation file layout::

    {"video_id": "...", "frames": [
        {"frame_index": 0, "av_action": "AV-Move",
         "ego_location": {"class": "VehicleLane", "id": 0},
         "entities": [{"track_id": 1, "class": "Car",
                       "location": "VehicleLane", "location_id": 0,
                       "actions": ["Move", "MovingTowards"],
                       "distance_m": 7.2}]}]}

An entity carries either ``distance_m`` (metres) or ``proximity`` (a label),
never both. Traffic lights carry ``light`` instead of a location.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import IO, Any, Callable, Iterable, Sequence

import numpy as np

from scenegen.ontology import (
    AGENT_ACTIONS,
    AV_ACTIONS,
    LIGHT_STATES,
    LOCATIONS,
    MOVABLE_AGENTS,
    PROXIMITY,
    RELATIVE_MOTION,
    NodeClass,
    OntologyError,
    Relation,
)

NEAR_COLLISION_MAX_M = 5.0
NEAR_MAX_M = 10.0
SPLIT_RATIOS = (0.70, 0.20, 0.10)


class AnnotationError(ValueError):
    """Malformed or inconsistent annotation input."""


@dataclass(frozen=True)
class EntityAnnotation:
    track_id: int
    cls: NodeClass
    location: NodeClass | None = None
    location_id: int = 0
    actions: tuple[Relation, ...] = ()
    light: Relation | None = None
    distance_m: float | None = None
    proximity: Relation | None = None

    def resolved_proximity(self) -> Relation:
        if self.proximity is not None:
            return self.proximity
        return proximity_from_distance(self.distance_m)


@dataclass(frozen=True)
class FrameAnnotation:
    frame_index: int
    av_action: Relation | None = None
    ego_location: tuple[NodeClass, int] | None = None
    entities: tuple[EntityAnnotation, ...] = ()

    def to_json(self) -> dict:
        ents = []
        for e in self.entities:
            d: dict[str, Any] = {"track_id": e.track_id, "class": e.cls.value}
            if e.location is not None:
                d["location"] = e.location.value
                d["location_id"] = e.location_id
            if e.actions:
                d["actions"] = [a.value for a in e.actions]
            if e.light is not None:
                d["light"] = e.light.value
            if e.distance_m is not None:
                d["distance_m"] = round(e.distance_m, 4)
            if e.proximity is not None:
                d["proximity"] = e.proximity.value
            ents.append(d)
        out: dict[str, Any] = {
            "frame_index": self.frame_index,
            "av_action": self.av_action.value if self.av_action else None,
        }
        if self.ego_location is not None:
            out["ego_location"] = {"class": self.ego_location[0].value, "id": self.ego_location[1]}
        out["entities"] = ents
        return out


def _label(doc: dict, key: str, parse, where: str, allowed=None):
    raw = doc.get(key)
    if raw is None:
        return None
    try:
        val = parse(raw)
    except OntologyError as exc:
        raise AnnotationError(f"{where}: field {key!r}: {exc}") from None
    if allowed is not None and val not in allowed:
        raise AnnotationError(f"{where}: field {key!r}: {raw!r} not allowed here")
    return val


def _parse_entity(doc: dict, where: str) -> EntityAnnotation:
    try:
        track = int(doc["track_id"])
        cls_raw = doc["class"]
    except (KeyError, TypeError, ValueError):
        raise AnnotationError(f"{where}: entity needs integer 'track_id' and 'class'") from None
    if track <= 0:
        raise AnnotationError(f"{where}: field 'track_id' must be positive (0 is the ego)")
    cls = _label(doc, "class", NodeClass.parse, where, MOVABLE_AGENTS | {NodeClass.TRAFFIC_LIGHT})
    assert cls is not None, cls_raw
    location = _label(doc, "location", NodeClass.parse, where, LOCATIONS)
    actions = []
    for a in doc.get("actions", []):
        try:
            rel = Relation.parse(a)
        except OntologyError as exc:
            raise AnnotationError(f"{where}: field 'actions': {exc}") from None
        if rel not in AGENT_ACTIONS and rel not in RELATIVE_MOTION:
            raise AnnotationError(f"{where}: field 'actions': {a!r} is not an agent action")
        actions.append(rel)
    light = _label(doc, "light", Relation.parse, where, LIGHT_STATES)
    prox = _label(doc, "proximity", Relation.parse, where, PROXIMITY)
    dist = doc.get("distance_m")
    if (dist is None) == (prox is None):
        raise AnnotationError(f"{where}: exactly one of 'distance_m' / 'proximity' is required")
    if dist is not None:
        dist = float(dist)
        if not dist > 0 or not math.isfinite(dist):
            raise AnnotationError(f"{where}: field 'distance_m' must be a positive number")
    if cls is NodeClass.TRAFFIC_LIGHT and location is not None:
        raise AnnotationError(f"{where}: traffic lights take no 'location'")
    return EntityAnnotation(
        track_id=track,
        cls=cls,
        location=location,
        location_id=int(doc.get("location_id", 0)),
        actions=tuple(actions),
        light=light,
        distance_m=dist,
        proximity=prox,
    )


def parse_frame(doc: dict) -> FrameAnnotation:
    try:
        idx = int(doc["frame_index"])
    except (KeyError, TypeError, ValueError):
        raise AnnotationError("frame needs an integer 'frame_index'") from None
    where = f"frame {idx}"
    av = _label(doc, "av_action", Relation.parse, where, AV_ACTIONS)
    ego_loc = None
    if doc.get("ego_location") is not None:
        el = doc["ego_location"]
        loc_cls = _label(el, "class", NodeClass.parse, where, LOCATIONS)
        ego_loc = (loc_cls, int(el.get("id", 0)))
    ents = []
    seen = set()
    for e in doc.get("entities", []):
        ent = _parse_entity(e, where)
        if ent.track_id in seen:
            raise AnnotationError(f"{where}: duplicate track_id {ent.track_id}")
        seen.add(ent.track_id)
        ents.append(ent)
    return FrameAnnotation(frame_index=idx, av_action=av, ego_location=ego_loc, entities=tuple(ents))


def parse_annotations(stream: IO[str] | str | dict) -> list[FrameAnnotation]:
    """Read one annotation document; returns frames sorted by frame index."""
    if isinstance(stream, dict):
        doc = stream
    else:
        text = stream if isinstance(stream, str) else stream.read()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise AnnotationError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("frames"), list):
        raise AnnotationError("annotation document needs a 'frames' list")
    frames = [parse_frame(f) for f in doc["frames"]]
    indices = [f.frame_index for f in frames]
    if len(set(indices)) != len(indices):
        raise AnnotationError("duplicate frame_index in document")
    return sorted(frames, key=lambda f: f.frame_index)


def proximity_from_distance(d_m: float) -> Relation:
    if d_m is None or not d_m > 0:
        raise ValueError(f"distance must be positive, got {d_m!r}")
    if d_m < NEAR_COLLISION_MAX_M:
        return Relation.NEAR_COLLISION
    if d_m <= NEAR_MAX_M:
        return Relation.NEAR
    return Relation.VISIBLE


def window_scenarios(frames: Sequence[FrameAnnotation], stride_downsample: int = 5, window: int = 5):
    """Keep every ``stride_downsample``-th frame of each complete block, then cut
    non-overlapping windows. Frames must be sorted by index."""
    if not frames:
        return []
    first = frames[0].frame_index
    # a kept frame stands for a full block of ``stride_downsample`` raw frames
    blocks = (frames[-1].frame_index - first + 1) // stride_downsample
    kept = [f for f in frames
            if (f.frame_index - first) % stride_downsample == 0 and (f.frame_index - first) // stride_downsample < blocks]
    return [list(kept[i : i + window]) for i in range(0, len(kept) - window + 1, window)]


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)
    ratios: tuple[float, float, float] = SPLIT_RATIOS


def split_dataset(
    windows: Sequence,
    rng_seed: int,
    key: Callable[[Any], Any] = lambda w: w.av_action,
) -> DatasetSplit:
    """Stratified 70/20/10 split per AV-action group; val/test sizes are floored."""
    groups: dict[str, list[int]] = defaultdict(list)
    for i, w in enumerate(windows):
        k = key(w)
        groups[k.value if isinstance(k, Relation) else str(k)].append(i)
    out = DatasetSplit()
    for gi, name in enumerate(sorted(groups)):
        idx = np.array(groups[name])
        rng = np.random.default_rng([rng_seed, gi])
        idx = idx[rng.permutation(len(idx))]
        n = len(idx)
        n_val = int(math.floor(SPLIT_RATIOS[1] * n + 1e-9))
        n_test = int(math.floor(SPLIT_RATIOS[2] * n + 1e-9))
        n_train = n - n_val - n_test
        out.train.extend(windows[i] for i in idx[:n_train])
        out.val.extend(windows[i] for i in idx[n_train : n_train + n_val])
        out.test.extend(windows[i] for i in idx[n_train + n_val :])
    return out


# --------------------------------------------------------------------------
# synthetic corpus


ONCOMING = frozenset({NodeClass.INCOMING_LANE, NodeClass.INCOMING_CYCLE_LANE})
SAME_DIRECTION = frozenset({NodeClass.VEHICLE_LANE, NodeClass.OUTGOING_LANE, NodeClass.OUTGOING_CYCLE_LANE})

_LOCATION_CHOICES = {
    NodeClass.CAR: {
        NodeClass.VEHICLE_LANE: 0.35,
        NodeClass.OUTGOING_LANE: 0.25,
        NodeClass.INCOMING_LANE: 0.25,
        NodeClass.PARKING: 0.10,
        NodeClass.JUNCTION: 0.05,
    },
    NodeClass.BUS: {
        NodeClass.VEHICLE_LANE: 0.3,
        NodeClass.OUTGOING_LANE: 0.2,
        NodeClass.INCOMING_LANE: 0.3,
        NodeClass.BUS_STOP: 0.2,
    },
    NodeClass.MOTORBIKE: {
        NodeClass.VEHICLE_LANE: 0.35,
        NodeClass.OUTGOING_LANE: 0.25,
        NodeClass.INCOMING_LANE: 0.3,
        NodeClass.JUNCTION: 0.1,
    },
    NodeClass.CYCLIST: {
        NodeClass.OUTGOING_CYCLE_LANE: 0.4,
        NodeClass.INCOMING_CYCLE_LANE: 0.3,
        NodeClass.VEHICLE_LANE: 0.3,
    },
    NodeClass.PEDESTRIAN: {NodeClass.PAVEMENT: 0.6, NodeClass.PEDESTRIAN_CROSSING: 0.4},
}

# next action given the current one; the generator walks this table
ACTION_TRANSITIONS = {
    Relation.MOVE: (Relation.MOVE, Relation.BRAKE),
    Relation.BRAKE: (Relation.STOP,),
    Relation.STOP: (Relation.STOP, Relation.MOVE),
}

_CRIT_BUCKETS = {
    Relation.NEAR_COLLISION: (1.5, 4.8),
    Relation.NEAR: (5.2, 9.8),
    Relation.VISIBLE: (10.5, 30.0),
}
_CRIT_CANONICAL = {Relation.NEAR_COLLISION: 3.0, Relation.NEAR: 7.0, Relation.VISIBLE: 15.0}


@dataclass
class SynthConfig:
    n_scenarios: int = 100
    min_agents: int = 1
    max_agents: int = 3
    action_weights: dict[str, float] = field(default_factory=lambda: {a.value: 1.0 for a in AV_ACTIONS})
    criticality_weights: dict[str, float] = field(
        default_factory=lambda: {c.value: 1.0 for c in PROXIMITY}
    )
    agent_weights: dict[str, float] = field(
        default_factory=lambda: {
            "Car": 0.4,
            "Pedestrian": 0.25,
            "Cyclist": 0.15,
            "Motorbike": 0.1,
            "Bus": 0.1,
        }
    )
    traffic_light_prob: float = 0.25
    # 0 gives canonical, fully determined trajectories; 1 samples everything
    noise: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("action_weights", "criticality_weights", "agent_weights"):
            w = getattr(self, name)
            if any(v < 0 for v in w.values()) or not any(v > 0 for v in w.values()):
                raise ValueError(f"{name}: weights must be non-negative with at least one positive")
        if not 1 <= self.min_agents <= self.max_agents:
            raise ValueError("need 1 <= min_agents <= max_agents")
        if self.n_scenarios < 0:
            raise ValueError("n_scenarios must be >= 0")


def _pick(rng: np.random.Generator, weights: dict, parse=None):
    keys = sorted(weights, key=str)
    p = np.array([weights[k] for k in keys], dtype=float)
    k = keys[int(rng.choice(len(keys), p=p / p.sum()))]
    return parse(k) if parse else k


def _action_timeline(rng, cls, loc, red_light, noisy) -> list[Relation]:
    if cls is NodeClass.PEDESTRIAN:
        if loc is NodeClass.PEDESTRIAN_CROSSING:
            return [Relation.CROSS] * 5
        if noisy and rng.random() < 0.3:
            return [Relation.STOP] * 5
        return [Relation.MOVE] * 5
    if loc in (NodeClass.PARKING, NodeClass.BUS_STOP):
        return [Relation.STOP] * 5
    if loc is NodeClass.JUNCTION:
        turn = Relation.TURN_LEFT if (not noisy or rng.random() < 0.5) else Relation.TURN_RIGHT
        return [turn] * 5
    if red_light and loc in SAME_DIRECTION:
        k = int(rng.integers(1, 3)) if noisy else 1
        return [Relation.MOVE] * k + [Relation.BRAKE] + [Relation.STOP] * (4 - k)
    if not noisy:
        return [Relation.MOVE] * 5
    seq = [Relation.MOVE if rng.random() < 0.8 else Relation.STOP]
    for _ in range(4):
        nxt = ACTION_TRANSITIONS[seq[-1]]
        p_stay = 0.85
        seq.append(nxt[0] if len(nxt) == 1 or rng.random() < p_stay else nxt[1])
    return seq


def _motion_mode(loc: NodeClass, actions: list[Relation]) -> Relation:
    if loc in SAME_DIRECTION:
        moving = sum(a is Relation.MOVE for a in actions)
        return Relation.MOVING_AWAY if moving >= 3 else Relation.MOVING_TOWARDS
    return Relation.MOVING_TOWARDS


def _trajectory(rng, level: Relation, mode: Relation, noisy: bool) -> list[float]:
    if noisy:
        lo, hi = _CRIT_BUCKETS[level]
        d_min = float(rng.uniform(lo, hi))
        rate = float(rng.uniform(1.5, 4.5))
    else:
        d_min, rate = _CRIT_CANONICAL[level], 3.0
    if mode is Relation.MOVING_TOWARDS:
        return [d_min + rate * (4 - t) for t in range(5)]
    return [d_min + rate * t for t in range(5)]


def _ego_plan(av: Relation, k: int) -> tuple[list[Relation | None], list[NodeClass]]:
    actions = [Relation.AV_MOVE if t < k else av for t in range(5)]
    lane = NodeClass.VEHICLE_LANE
    if av in (Relation.AV_MOVE_LEFT, Relation.AV_MOVE_RIGHT):
        locs = [lane if t < k else NodeClass.OUTGOING_LANE for t in range(5)]
    elif av is Relation.AV_OVERTAKE:
        locs = [NodeClass.INCOMING_LANE if k <= t < 4 else lane for t in range(5)]
    elif av in (Relation.AV_TURN_LEFT, Relation.AV_TURN_RIGHT):
        locs = [lane if t < k else NodeClass.JUNCTION for t in range(5)]
    else:
        locs = [lane] * 5
    return actions, locs


def _synth_one(rng: np.random.Generator, cfg: SynthConfig, scenario: int) -> list[FrameAnnotation]:
    noisy = rng.random() < cfg.noise
    av = _pick(rng, cfg.action_weights, Relation.parse)
    crit = _pick(rng, cfg.criticality_weights, Relation.parse)
    k = int(rng.integers(1, 4)) if noisy else 2
    ego_actions, ego_locs = _ego_plan(av, k)
    if noisy:
        # frames before the switch occasionally lack an AV action label
        ego_actions = [a if t >= k or rng.random() > 0.2 else None for t, a in enumerate(ego_actions)]

    n_agents = int(rng.integers(cfg.min_agents, cfg.max_agents + 1))
    has_light = rng.random() < cfg.traffic_light_prob
    light_seq: list[Relation] = []
    if has_light:
        if noisy:
            light_seq = [
                [Relation.GREEN] * 5,
                [Relation.RED] * 5,
                [Relation.GREEN, Relation.GREEN, Relation.AMBER, Relation.RED, Relation.RED],
                [Relation.RED, Relation.RED, Relation.GREEN, Relation.GREEN, Relation.GREEN],
            ][int(rng.integers(0, 4))]
        else:
            light_seq = [Relation.RED] * 5
    red = any(s is Relation.RED for s in light_seq)

    per_track: list[tuple[EntityAnnotation, list[Relation], list[float], Relation]] = []
    sev = [Relation.VISIBLE, Relation.NEAR, Relation.NEAR_COLLISION]
    allowed = sev[: sev.index(crit) + 1]
    for i in range(n_agents):
        track = i + 1
        cls = _pick(rng, cfg.agent_weights, NodeClass.parse)
        loc = _pick(rng, _LOCATION_CHOICES[cls]) if noisy else next(iter(_LOCATION_CHOICES[cls]))
        acts = _action_timeline(rng, cls, loc, red, noisy)
        mode = _motion_mode(loc, acts)
        if i == 0:
            level = crit
        elif noisy and rng.random() < 0.3:
            level = allowed[int(rng.integers(0, len(allowed)))]
        else:
            level = Relation.VISIBLE
        dist = _trajectory(rng, level, mode, noisy)
        if not noisy and i > 0:
            dist = [d + 5.0 * i for d in dist]
        per_track.append((EntityAnnotation(track, cls, loc, 0), acts, dist, mode))

    light_track = n_agents + 1
    light_dist: list[float] = []
    if has_light:
        lo = 11.0 if not noisy else float(rng.uniform(10.5, 25.0))
        light_dist = [lo + 2.0 * (4 - t) for t in range(5)]

    base = 5 * int(rng.integers(0, 40)) if noisy else 0
    frames = []
    for t in range(5):
        ents = []
        for proto, acts, dist, mode in per_track:
            ents.append(
                EntityAnnotation(
                    track_id=proto.track_id,
                    cls=proto.cls,
                    location=proto.location,
                    location_id=0,
                    actions=(acts[t], mode),
                    distance_m=round(dist[t], 4),
                )
            )
        if has_light:
            ents.append(
                EntityAnnotation(
                    track_id=light_track,
                    cls=NodeClass.TRAFFIC_LIGHT,
                    light=light_seq[t],
                    distance_m=round(light_dist[t], 4),
                )
            )
        frames.append(
            FrameAnnotation(
                frame_index=base + 5 * t,
                av_action=ego_actions[t],
                ego_location=(ego_locs[t], 0),
                entities=tuple(ents),
            )
        )
    return frames


def generate_synthetic(cfg: SynthConfig) -> list[list[FrameAnnotation]]:
    """Procedurally generate ``cfg.n_scenarios`` five-frame scenarios.

    Each scenario's primary agent (track 1) follows a distance trajectory whose
    minimum falls in the sampled criticality bucket; every other entity stays
    at or below that severity, so the derived criticality equals the sample.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    return [_synth_one(rng, cfg, s) for s in range(cfg.n_scenarios)]


def annotations_to_json(frames: Iterable[FrameAnnotation], video_id: str) -> dict:
    return {"video_id": video_id, "frames": [f.to_json() for f in frames]}
