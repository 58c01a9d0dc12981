"""Fixed-step point-mass playback of a scenario script under an ego policy.

Coordinates: ``s`` runs along the road in the ego's initial travel direction
with the ego starting at 0; ``y`` is lateral, positive to the ego's left.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from scenegen.evaluation import SCRReport, scenario_consistency_rate
from scenegen.graph import N_FRAMES
from scenegen.ingest import proximity_from_distance
from scenegen.ontology import NodeClass, Relation
from scenegen.scenario import (
    CROSSING,
    HORIZON_S,
    ONCOMING,
    SAME,
    ActorSpec,
    ScenarioError,
    ScenarioScript,
    default_lanes,
)

COLLISION_DISTANCE = 1.0
CORRIDOR_HALF_WIDTH = 1.75
LATERAL_SPEED = 1.0
EGO_ACCEL = 2.0

# (acceleration, deceleration) limits in m/s^2
ACTOR_LIMITS = {
    NodeClass.PEDESTRIAN: (1.5, 3.0),
    NodeClass.CYCLIST: (1.5, 3.0),
    NodeClass.CAR: (3.0, 6.0),
    NodeClass.BUS: (1.5, 4.0),
    NodeClass.MOTORBIKE: (4.0, 7.0),
}


class PlaybackError(ValueError):
    pass


@dataclass(frozen=True)
class EgoPolicy:
    name: str
    target_speed: float
    ttc_threshold: float
    comfortable_decel: float

    def __post_init__(self):
        for k in ("target_speed", "ttc_threshold", "comfortable_decel"):
            if not getattr(self, k) > 0:
                raise PlaybackError(f"policy {self.name}: {k} must be positive")


POLICIES = {
    "normal": EgoPolicy("normal", 8.0, 3.0, 3.0),
    "cautious": EgoPolicy("cautious", 6.0, 4.0, 2.5),
    "aggressive": EgoPolicy("aggressive", 10.0, 1.5, 4.5),
}


def get_policy(name: str, overrides: dict | None = None) -> EgoPolicy:
    if name not in POLICIES:
        raise PlaybackError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}")
    return replace(POLICIES[name], **(overrides or {}))


@dataclass
class _Body:
    name: str
    lane: int
    s: float
    y: float
    speed: float
    direction: float  # +1 along s, -1 against, 0 lateral mover
    accel: float
    decel: float
    spec: ActorSpec | None = None
    lateral_goal: float | None = None


@dataclass
class PlaybackResult:
    trajectories: list[tuple[float, str, int, float, float, float]]
    min_distance: float
    collision: bool
    realized: Relation
    closest_actor: str | None = None

    def trajectory_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "entity", "lane", "s", "y", "speed"])
        for t, name, lane, s, y, v in self.trajectories:
            w.writerow([f"{t:.2f}", name, lane, f"{s:.4f}", f"{y:.4f}", f"{v:.4f}"])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "min_distance": None if math.isinf(self.min_distance) else self.min_distance,
            "collision": self.collision,
            "realized": self.realized.value,
            "closest_actor": self.closest_actor,
        }


def realized_criticality(min_distance: float, collision: bool) -> Relation:
    if collision or min_distance <= 0.0:
        return Relation.NEAR_COLLISION
    if math.isinf(min_distance):
        return Relation.VISIBLE
    return proximity_from_distance(min_distance)


def _tau_at(t: float, script: ScenarioScript) -> int:
    return min(int(t / script.tau_seconds + 1e-9), N_FRAMES - 1)


def _approach(v: float, target: float, accel: float, decel: float, dt: float) -> float:
    if target > v:
        return min(target, v + accel * dt)
    return max(target, v - decel * dt)


def _ego_target(script: ScenarioScript, policy: EgoPolicy, tau: int) -> float:
    if tau < script.switch_tau:
        return policy.target_speed
    av = script.av_action
    if av is Relation.AV_STOP:
        return 0.0
    if av in (Relation.AV_TURN_LEFT, Relation.AV_TURN_RIGHT):
        return min(policy.target_speed, 4.0)
    if av is Relation.AV_OVERTAKE:
        return policy.target_speed + 2.0
    return policy.target_speed


def _spawn_actor(script: ScenarioScript, a: ActorSpec, jitter: float) -> _Body:
    acc, dec = ACTOR_LIMITS[a.cls]
    lane = script.lane(a.spawn[0])
    if a.heading == CROSSING:
        y0 = a.start_y if a.start_y is not None else lane.y + lane.width / 2
        # cross to the far kerb of the carriageway
        far = min(ln.y for ln in script.lanes) if y0 > 0 else max(ln.y for ln in script.lanes)
        return _Body(f"{a.cls.value.lower()}_{a.track_id}", lane.id, a.spawn[1] + jitter, y0, a.speeds[0],
                     0.0, acc, dec, a, far)
    direction = 1.0 if a.heading == SAME else -1.0
    return _Body(f"{a.cls.value.lower()}_{a.track_id}", lane.id, a.spawn[1] + jitter, lane.y, a.speeds[0],
                 direction, acc, dec, a)


def _conflicts(ego: _Body, other: _Body) -> bool:
    dy = other.y - ego.y
    if abs(dy) < CORRIDOR_HALF_WIDTH:
        return True
    if other.direction == 0.0 and other.lateral_goal is not None and other.speed > 0:
        # a crosser heading towards the ego's corridor
        return (other.lateral_goal - other.y) * (ego.y - other.y) > 0
    return False


def _ttc(ego: _Body, other: _Body) -> float:
    gap = other.s - ego.s
    if gap <= 0:
        return math.inf
    closing = ego.speed - other.direction * other.speed
    if closing <= 0:
        return math.inf
    return max(gap - COLLISION_DISTANCE, 0.0) / closing


def run(script: ScenarioScript, policy: EgoPolicy | str = "normal", dt: float = 0.05,
        horizon: float = HORIZON_S, rng_seed: int = 0, jitter: float = 0.0,
        record: bool = True) -> PlaybackResult:
    """Integrate the scene with a fixed step.

    ``jitter`` adds Gaussian noise (std, metres) to actor spawn offsets from a
    generator seeded with ``rng_seed``; with the default 0 the run is exact.
    """
    if isinstance(policy, str):
        policy = get_policy(policy)
    if not dt > 0 or not horizon > 0:
        raise PlaybackError("dt and horizon must be positive")
    try:
        script.validate()
    except ScenarioError as exc:
        raise PlaybackError(f"malformed script: {exc}") from None
    rng = np.random.default_rng(rng_seed)
    ego_lane = script.lane(script.ego_lanes[0])
    ego = _Body("ego", ego_lane.id, 0.0, ego_lane.y, script.ego_speed, 1.0, EGO_ACCEL, policy.comfortable_decel)
    actors = [_spawn_actor(script, a, float(rng.normal(0.0, jitter)) if jitter > 0 else 0.0)
              for a in script.actors]
    bodies = [ego, *actors]

    traj: list = []
    min_d, closest, collision = math.inf, None, False
    steps = int(round(horizon / dt))
    for k in range(steps + 1):
        t = k * dt
        tau = _tau_at(t, script)
        if k == 0:
            for b in actors:
                d = math.hypot(b.s - ego.s, b.y - ego.y)
                if d < min_d:
                    min_d, closest = d, b.name
        collision = min_d < COLLISION_DISTANCE
        if record:
            traj.extend((t, b.name, b.lane, b.s, b.y, b.speed) for b in bodies)
        if k == steps:
            break

        before = [(b.s - ego.s, b.y - ego.y) for b in actors]
        # ego: brake for the most urgent conflict, else track the route speed
        ttc = min((_ttc(ego, b) for b in actors if _conflicts(ego, b)), default=math.inf)
        target = _ego_target(script, policy, tau)
        if ttc < policy.ttc_threshold:
            target = 0.0
        ego.speed = _approach(ego.speed, target, ego.accel, ego.decel, dt)
        ego.lane = script.ego_lanes[tau]
        ego.y = _toward(ego.y, script.lane(ego.lane).y, LATERAL_SPEED * dt)
        ego.s += ego.speed * dt

        for b in actors:
            a = b.spec
            b.speed = _approach(b.speed, a.speeds[tau], b.accel, b.decel, dt)
            if b.direction == 0.0:
                b.y = _toward(b.y, b.lateral_goal, b.speed * dt)
            else:
                b.lane = a.lanes[tau]
                b.y = _toward(b.y, script.lane(b.lane).y, LATERAL_SPEED * dt)
                b.s += b.direction * b.speed * dt
        # closest approach inside the step, relative motion taken as linear
        for b, (ds0, dy0) in zip(actors, before):
            d = _segment_min(ds0, dy0, b.s - ego.s, b.y - ego.y)
            if d < min_d:
                min_d, closest = d, b.name

    return PlaybackResult(traj, min_d, collision, realized_criticality(min_d, collision), closest)


def _segment_min(x0: float, y0: float, x1: float, y1: float) -> float:
    dx, dy = x1 - x0, y1 - y0
    den = dx * dx + dy * dy
    u = 0.0 if den == 0.0 else min(max(-(x0 * dx + y0 * dy) / den, 0.0), 1.0)
    return math.hypot(x0 + u * dx, y0 + u * dy)


def _toward(x: float, goal: float, step: float) -> float:
    if abs(goal - x) <= step:
        return goal
    return x + math.copysign(step, goal - x)


def batch_consistency(items: Iterable[ScenarioScript | tuple[ScenarioScript, Relation]],
                      policy: EgoPolicy | str = "normal", **run_kw) -> tuple[SCRReport, list[PlaybackResult]]:
    """Run every script and compare its realized criticality with the requested
    one (the script's own criticality unless given explicitly)."""
    pairs, results = [], []
    for item in items:
        script, requested = item if isinstance(item, tuple) else (item, item.criticality)
        res = run(script, policy, record=False, **run_kw)
        pairs.append((requested, res.realized))
        results.append(res)
    if not pairs:
        raise PlaybackError("batch is empty")
    return scenario_consistency_rate(pairs), results


# --------------------------------------------------------------------------
# hand-built scripts with known outcomes


def _actor(track: int, cls: NodeClass, lane: int, offset: float, heading: str, speeds: Sequence[float],
           behavior=None) -> ActorSpec:
    return ActorSpec(track, cls, (lane, offset), (lane, offset), heading,
                     tuple(behavior or [Relation.MOVE] * N_FRAMES), (lane,) * N_FRAMES, tuple(speeds))


def following_script(gap: float, speed: float = 8.0, level: Relation | None = None) -> ScenarioScript:
    """A car ahead in the ego lane holding the ego's speed: the gap never changes."""
    level = level or proximity_from_distance(gap)
    return ScenarioScript(default_lanes(), (2,) * N_FRAMES, Relation.AV_MOVE, speed,
                          [_actor(1, NodeClass.CAR, 2, gap, SAME, [speed] * N_FRAMES)], level)


def stopping_script(obstacle: float, ego_speed: float = 8.0) -> ScenarioScript:
    """The ego performs a stop while a parked car waits ``obstacle`` metres ahead."""
    return ScenarioScript(default_lanes(), (2,) * N_FRAMES, Relation.AV_STOP, ego_speed,
                          [_actor(1, NodeClass.CAR, 2, obstacle, SAME, [0.0] * N_FRAMES, [Relation.STOP] * N_FRAMES)],
                          Relation.VISIBLE)


def head_on_script(gap: float, actor_speed: float, stop_tau: int | None = None) -> ScenarioScript:
    """An oncoming car in the ego's own lane; it stops from ``stop_tau`` on if given."""
    speeds = [0.0 if stop_tau is not None and t >= stop_tau else actor_speed for t in range(N_FRAMES)]
    behavior = [Relation.STOP if v == 0.0 else Relation.MOVE for v in speeds]
    return ScenarioScript(default_lanes(), (2,) * N_FRAMES, Relation.AV_MOVE, 8.0,
                          [_actor(1, NodeClass.CAR, 2, gap, ONCOMING, speeds, behavior)], Relation.NEAR_COLLISION)


def oracle_suite() -> list[ScenarioScript]:
    """Constant-gap followers: three per criticality level, minimum distance = gap."""
    return [following_script(g) for g in (2.0, 3.0, 4.5, 5.5, 7.5, 9.5, 12.0, 20.0, 35.0)]


def head_on_family() -> list[ScenarioScript]:
    """Twenty head-on encounters in which the oncoming car stops in time to
    leave a policy-dependent margin."""
    out = []
    for gap in (70.0, 80.0, 90.0, 100.0, 110.0):
        for v in (4.0, 8.0):
            for stop in (1, 2):
                out.append(head_on_script(gap, v, stop))
    return out


__all__ = [
    "EgoPolicy",
    "POLICIES",
    "PlaybackResult",
    "batch_consistency",
    "get_policy",
    "head_on_family",
    "oracle_suite",
    "run",
]
