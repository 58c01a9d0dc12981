"""Scene graphs: per-frame construction, temporal merging, seed pruning,
ontology-driven augmentation, feature assembly and the seed database.

Edges that involve the ego are stored in their ontology orientation
(``Car -Near-> EGO``, ``EGO -IsIn-> VehicleLane``). Candidates are always
anchored at the ego and point at the other node; :func:`candidate_edge`
restores the ontology orientation.
"""

from __future__ import annotations

import enum
import json
import math
import threading
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from scenegen.ingest import FrameAnnotation
from scenegen.ontology import (
    AV_ACTIONS,
    CLASS_TO_CRITICALITY,
    CRITICALITY_CLASSES,
    CRITICALITY_TO_CLASS,
    LOCATIONS,
    MOVABLE_AGENTS,
    PROXIMITY,
    RELATIVE_MOTION,
    SELF_RELATIONS,
    VEHICLES,
    NodeClass,
    Ontology,
    OntologyError,
    Relation,
    default_ontology,
)

N_FRAMES = 5
EGO_TRACK = 0
CRITICALITY_TRACK = 900
LOCATION_TRACK_BASE = 1000
_LOCATION_ORDER = tuple(c for c in NodeClass if c in LOCATIONS)
NODE_FEATURES = 22
EDGE_FEATURES = 27


class GraphError(ValueError):
    """Graph construction or validation failure."""


class LabelingError(GraphError):
    """A scenario could not be labelled (e.g. no AV action recorded)."""


class Flavor(enum.Enum):
    SCENARIO = "Scenario"
    SEED = "Seed"
    DATABASE_SEED = "DatabaseSeed"
    AUGMENTED = "Augmented"


def location_track(cls: NodeClass, instance: int) -> int:
    return LOCATION_TRACK_BASE + 32 * instance + _LOCATION_ORDER.index(cls)


class Node(NamedTuple):
    uid: int
    track: int
    cls: NodeClass


class Edge(NamedTuple):
    src: int
    dst: int
    relation: Relation
    tau: int


class TripletCandidate(NamedTuple):
    src: int
    dst: int
    relation: Relation
    tau: int
    label: int | None = None
    probability: float | None = None


@dataclass(frozen=True)
class FrameGraph:
    """A single-frame scene graph keyed by track id."""

    frame_index: int
    av_action: Relation | None
    nodes: dict[int, NodeClass]
    edges: tuple[tuple[int, Relation, int], ...]


@dataclass(frozen=True)
class TemporalGraph:
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    av_action: Relation | None = None
    criticality: Relation | None = None
    flavor: Flavor = Flavor.SCENARIO
    frame_indices: tuple[int, ...] = tuple(range(N_FRAMES))

    @property
    def ego(self) -> Node:
        for n in self.nodes:
            if n.cls is NodeClass.EGO:
                return n
        raise GraphError("graph has no ego node")

    def node(self, uid: int) -> Node:
        n = self.nodes[uid]
        if n.uid != uid:  # uids are positional by construction
            raise GraphError(f"uid {uid} out of place")
        return n

    def conditioning_edges(self) -> list[Edge]:
        return [e for e in self.edges if is_conditioning(e)]

    def agent_classes(self) -> Counter:
        return Counter(n.cls for n in self.nodes if n.cls in MOVABLE_AGENTS or n.cls is NodeClass.TRAFFIC_LIGHT)


def is_conditioning(e: Edge) -> bool:
    return e.relation is Relation.CRITICALITY_LINK or e.relation in AV_ACTIONS


def build_frame_graph(frame: FrameAnnotation, ont: Ontology | None = None) -> FrameGraph:
    ont = ont or default_ontology()
    nodes: dict[int, NodeClass] = {EGO_TRACK: NodeClass.EGO}
    edges: list[tuple[int, Relation, int]] = []

    def add_location(cls: NodeClass, inst: int) -> int:
        t = location_track(cls, inst)
        nodes[t] = cls
        return t

    if frame.ego_location is not None:
        edges.append((EGO_TRACK, Relation.IS_IN, add_location(*frame.ego_location)))
    red_lights = [e.track_id for e in frame.entities if e.cls is NodeClass.TRAFFIC_LIGHT and e.light is Relation.RED]
    for ent in frame.entities:
        if ent.track_id in nodes:
            raise GraphError(f"frame {frame.frame_index}: duplicate track {ent.track_id}")
        nodes[ent.track_id] = ent.cls
        if ent.location is not None:
            edges.append((ent.track_id, Relation.IS_IN, add_location(ent.location, ent.location_id)))
        for a in ent.actions:
            if a in RELATIVE_MOTION:
                edges.append((ent.track_id, a, EGO_TRACK))
            else:
                edges.append((ent.track_id, a, ent.track_id))
        if ent.light is not None:
            edges.append((ent.track_id, ent.light, ent.track_id))
        edges.append((ent.track_id, ent.resolved_proximity(), EGO_TRACK))
        if ent.cls in VEHICLES:
            for tl in red_lights:
                edges.append((ent.track_id, Relation.MUST_STOP, tl))
    for s, r, o in edges:
        if not ont.validate_triplet(nodes[s], r, nodes[o]):
            raise GraphError(
                f"frame {frame.frame_index}: invalid triplet ({nodes[s].value}, {r.value}, {nodes[o].value})"
            )
    return FrameGraph(frame.frame_index, frame.av_action, nodes, tuple(dict.fromkeys(edges)))


def derive_criticality(edges: Iterable, ont: Ontology | None = None) -> Relation:
    """Most severe proximity relation among ``edges``; Visible if there is none.

    Accepts a :class:`TemporalGraph`, a sequence of :class:`FrameGraph`, or an
    iterable of edges/triplets carrying a relation.
    """
    ont = ont or default_ontology()
    if isinstance(edges, TemporalGraph):
        rels = (e.relation for e in edges.edges)
    else:
        items = list(edges)
        if items and isinstance(items[0], FrameGraph):
            rels = (r for fg in items for _, r, _ in fg.edges)
        else:
            rels = (e.relation if isinstance(e, (Edge, TripletCandidate)) else e[1] for e in items)
    found = [r for r in rels if r in PROXIMITY]
    return ont.most_severe(found) if found else Relation.VISIBLE


def derive_av_action(frames: Sequence) -> Relation:
    for f in reversed(list(frames)):
        a = f if isinstance(f, Relation) or f is None else f.av_action
        if a is not None:
            return a
    raise LabelingError("no frame carries an AV action")


def build_temporal_graph(frames: Sequence[FrameGraph], ont: Ontology | None = None) -> TemporalGraph:
    ont = ont or default_ontology()
    if len(frames) != N_FRAMES:
        raise GraphError(f"expected {N_FRAMES} frames, got {len(frames)}")
    classes: dict[int, NodeClass] = {}
    for fg in frames:
        for track, cls in fg.nodes.items():
            if classes.setdefault(track, cls) is not cls:
                raise GraphError(f"track {track} changes class ({classes[track].value} -> {cls.value})")
    tracks = sorted(t for t in classes if t != EGO_TRACK)
    uid_of = {EGO_TRACK: 0}
    nodes = [Node(0, EGO_TRACK, NodeClass.EGO)]
    for t in tracks:
        uid_of[t] = len(nodes)
        nodes.append(Node(len(nodes), t, classes[t]))
    edges: dict[Edge, None] = {}
    for tau, fg in enumerate(frames):
        for s, r, o in fg.edges:
            edges[Edge(uid_of[s], uid_of[o], r, tau)] = None
    crit = derive_criticality(frames, ont)
    av = derive_av_action(frames)
    crit_uid = len(nodes)
    nodes.append(Node(crit_uid, CRITICALITY_TRACK, CRITICALITY_TO_CLASS[crit]))
    edges[Edge(crit_uid, 0, Relation.CRITICALITY_LINK, 0)] = None
    edges[Edge(0, 0, av, 0)] = None
    return TemporalGraph(
        nodes=tuple(nodes),
        edges=tuple(edges),
        av_action=av,
        criticality=crit,
        flavor=Flavor.SCENARIO,
        frame_indices=tuple(fg.frame_index for fg in frames),
    )


def scenario_from_annotations(frames: Sequence[FrameAnnotation], ont: Ontology | None = None) -> TemporalGraph:
    return build_temporal_graph([build_frame_graph(f, ont) for f in frames], ont)


def validate_graph(g: TemporalGraph, ont: Ontology | None = None) -> None:
    """Raise :class:`GraphError` unless every edge and flavor invariant holds."""
    ont = ont or default_ontology()
    for i, n in enumerate(g.nodes):
        if n.uid != i:
            raise GraphError(f"node {n} has non-positional uid")
    if sum(n.cls is NodeClass.EGO for n in g.nodes) > 1:
        raise GraphError("more than one ego node")
    for e in g.edges:
        if not 0 <= e.tau < N_FRAMES:
            raise GraphError(f"edge {e} has tau outside [0, {N_FRAMES - 1}]")
        s, o = g.nodes[e.src].cls, g.nodes[e.dst].cls
        if not ont.validate_triplet(s, e.relation, o):
            raise GraphError(f"invalid triplet ({s.value}, {e.relation.value}, {o.value})")
        if (e.relation in SELF_RELATIONS) != (e.src == e.dst):
            raise GraphError(f"edge {e} violates the self-relation rule")
    ego = g.ego.uid
    crit_nodes = [n for n in g.nodes if n.cls in CRITICALITY_CLASSES]
    cond = g.conditioning_edges()
    ego_edges = [e for e in g.edges if ego in (e.src, e.dst)]
    if g.flavor in (Flavor.SCENARIO, Flavor.AUGMENTED, Flavor.SEED):
        if g.av_action is None or g.criticality is None:
            raise GraphError(f"{g.flavor.value} graph lacks conditioning labels")
        if len(crit_nodes) != 1 or CLASS_TO_CRITICALITY[crit_nodes[0].cls] is not g.criticality:
            raise GraphError("criticality node missing or inconsistent")
        rels = sorted(e.relation.value for e in cond)
        if rels != sorted([Relation.CRITICALITY_LINK.value, g.av_action.value]):
            raise GraphError("conditioning edges missing or inconsistent")
    if g.flavor in (Flavor.SEED, Flavor.AUGMENTED) and len(ego_edges) != 2:
        raise GraphError(f"{g.flavor.value} graph keeps non-conditioning ego edges")
    if g.flavor is Flavor.DATABASE_SEED and (ego_edges or crit_nodes or g.av_action is not None):
        raise GraphError("database seed keeps ego edges or conditioning")


def prune_to_seed(g: TemporalGraph, keep_conditioning: bool = True) -> TemporalGraph:
    ego = g.ego.uid
    kept = [e for e in g.edges if ego not in (e.src, e.dst) or (keep_conditioning and is_conditioning(e))]
    if keep_conditioning:
        return replace(g, edges=tuple(kept), flavor=Flavor.SEED)
    nodes = [n for n in g.nodes if n.cls not in CRITICALITY_CLASSES]
    if any(n.uid != i for i, n in enumerate(nodes)):
        raise GraphError("criticality node must carry the last uid")
    return replace(g, nodes=tuple(nodes), edges=tuple(kept), av_action=None, criticality=None,
                   flavor=Flavor.DATABASE_SEED)


def condition_seed(db_seed: TemporalGraph, av_action: Relation, criticality: Relation) -> TemporalGraph:
    """Reattach the AV action self-loop and a criticality node to a database seed."""
    if av_action not in AV_ACTIONS or criticality not in PROXIMITY:
        raise GraphError("conditioning needs an AV action and a proximity level")
    crit_uid = len(db_seed.nodes)
    nodes = db_seed.nodes + (Node(crit_uid, CRITICALITY_TRACK, CRITICALITY_TO_CLASS[criticality]),)
    ego = db_seed.ego.uid
    edges = db_seed.edges + (
        Edge(crit_uid, ego, Relation.CRITICALITY_LINK, 0),
        Edge(ego, ego, av_action, 0),
    )
    return replace(db_seed, nodes=nodes, edges=edges, av_action=av_action, criticality=criticality,
                   flavor=Flavor.SEED)


def augment(seed: TemporalGraph, ont: Ontology | None = None) -> tuple[TemporalGraph, list[TripletCandidate]]:
    ont = ont or default_ontology()
    if seed.flavor is not Flavor.SEED:
        raise GraphError(f"augment expects a Seed graph, got {seed.flavor.value}")
    ego = seed.ego.uid
    cands = []
    for n in seed.nodes:
        if n.uid == ego:
            continue
        rels = ont.ego_candidate_relations(n.cls)
        for r in sorted(rels, key=ont.relation_index):
            for tau in range(N_FRAMES):
                cands.append(TripletCandidate(ego, n.uid, r, tau))
    return replace(seed, flavor=Flavor.AUGMENTED), cands


def ego_edge_key(e: Edge | TripletCandidate, ego: int) -> tuple[int, Relation, int]:
    other = e.dst if e.src == ego else e.src
    return other, e.relation, e.tau


def label_candidates(candidates: Sequence[TripletCandidate], ground_truth: TemporalGraph) -> list[TripletCandidate]:
    ego = ground_truth.ego.uid
    gold = {ego_edge_key(e, ego) for e in ground_truth.edges
            if ego in (e.src, e.dst) and not is_conditioning(e)}
    return [c._replace(label=int(ego_edge_key(c, ego) in gold)) for c in candidates]


def candidate_edge(c: TripletCandidate, g: TemporalGraph, ont: Ontology | None = None) -> Edge:
    ont = ont or default_ontology()
    ego_cls, other_cls = g.nodes[c.src].cls, g.nodes[c.dst].cls
    if ont.validate_triplet(ego_cls, c.relation, other_cls):
        return Edge(c.src, c.dst, c.relation, c.tau)
    if ont.validate_triplet(other_cls, c.relation, ego_cls):
        return Edge(c.dst, c.src, c.relation, c.tau)
    raise OntologyError(f"candidate {c} is not valid in either orientation")


def slice_tau(g: TemporalGraph, tau: int) -> FrameGraph:
    """Recover the frame graph at ``tau`` (conditioning edges excluded)."""
    edges = [e for e in g.edges if e.tau == tau and not is_conditioning(e)]
    ego = g.ego
    used = {ego.uid} | {e.src for e in edges} | {e.dst for e in edges}
    nodes = {g.nodes[u].track: g.nodes[u].cls for u in used}
    triples = tuple((g.nodes[e.src].track, e.relation, g.nodes[e.dst].track) for e in edges)
    return FrameGraph(g.frame_indices[tau], None, nodes, triples)


def positional_encoding(track_id: int) -> np.ndarray:
    if track_id < 0:
        raise ValueError("track ids are non-negative")
    return np.array([math.sin(track_id), math.cos(track_id)])


@dataclass
class FeatureVectors:
    node_features: np.ndarray  # (n, 22)
    edge_features: np.ndarray  # (m, 27) for graph edges
    edge_src: np.ndarray
    edge_dst: np.ndarray
    conditioning: np.ndarray  # bool (m,)
    candidate_features: np.ndarray  # (c, 27)
    cand_src: np.ndarray
    cand_dst: np.ndarray
    cand_tau: np.ndarray
    cand_slot: np.ndarray  # (dst, relation) slot shared across tau
    ego: int
    labels: np.ndarray | None = None


def _edge_vector(ont: Ontology, r: Relation, tau: int) -> np.ndarray:
    v = np.zeros(EDGE_FEATURES)
    v[ont.relation_index(r)] = 1.0
    v[26] = tau / (N_FRAMES - 1)
    return v


def assemble_features(
    g: TemporalGraph,
    candidates: Sequence[TripletCandidate] = (),
    ont: Ontology | None = None,
    positional: bool = True,
) -> FeatureVectors:
    ont = ont or default_ontology()
    n = len(g.nodes)
    x = np.zeros((n, NODE_FEATURES))
    for node in g.nodes:
        x[node.uid, ont.class_index(node.cls)] = 1.0
        if positional:
            x[node.uid, 20:] = positional_encoding(node.track)
    ef = np.array([_edge_vector(ont, e.relation, e.tau) for e in g.edges]).reshape(-1, EDGE_FEATURES)
    cf = np.array([_edge_vector(ont, c.relation, c.tau) for c in candidates]).reshape(-1, EDGE_FEATURES)
    slots: dict[tuple[int, Relation], int] = {}
    slot = np.array([slots.setdefault((c.dst, c.relation), len(slots)) for c in candidates], dtype=np.int64)
    labels = None
    if candidates and all(c.label is not None for c in candidates):
        labels = np.array([c.label for c in candidates], dtype=float)
    return FeatureVectors(
        node_features=x,
        edge_features=ef,
        edge_src=np.array([e.src for e in g.edges], dtype=np.int64),
        edge_dst=np.array([e.dst for e in g.edges], dtype=np.int64),
        conditioning=np.array([is_conditioning(e) for e in g.edges], dtype=bool),
        candidate_features=cf,
        cand_src=np.array([c.src for c in candidates], dtype=np.int64),
        cand_dst=np.array([c.dst for c in candidates], dtype=np.int64),
        cand_tau=np.array([c.tau for c in candidates], dtype=np.int64),
        cand_slot=slot,
        ego=g.ego.uid,
        labels=labels,
    )


# --------------------------------------------------------------------------
# persistence


def graph_to_json(g: TemporalGraph) -> dict:
    return {
        "nodes": [{"uid": n.uid, "track": n.track, "cls": n.cls.value} for n in g.nodes],
        "edges": [{"src": e.src, "dst": e.dst, "rel": e.relation.value, "tau": e.tau} for e in g.edges],
        "av_action": g.av_action.value if g.av_action else None,
        "criticality": g.criticality.value if g.criticality else None,
        "flavor": g.flavor.value,
        "frames": list(g.frame_indices),
    }


def graph_from_json(doc: dict) -> TemporalGraph:
    try:
        nodes = tuple(Node(int(n["uid"]), int(n["track"]), NodeClass.parse(n["cls"])) for n in doc["nodes"])
        edges = tuple(Edge(int(e["src"]), int(e["dst"]), Relation.parse(e["rel"]), int(e["tau"])) for e in doc["edges"])
    except (KeyError, TypeError) as exc:
        raise GraphError(f"malformed graph record: {exc}") from None
    av = Relation.parse(doc["av_action"]) if doc.get("av_action") else None
    crit = Relation.parse(doc["criticality"]) if doc.get("criticality") else None
    flavor = Flavor(doc.get("flavor", Flavor.SCENARIO.value if av else Flavor.DATABASE_SEED.value))
    frames = tuple(doc.get("frames", range(N_FRAMES)))
    return TemporalGraph(nodes, edges, av, crit, flavor, frames)


def dumps_graph(g: TemporalGraph) -> str:
    return json.dumps(graph_to_json(g), separators=(",", ":"))


def write_jsonl(graphs: Iterable[TemporalGraph], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(dumps_graph(g) + "\n")


def read_jsonl(path: str | Path) -> list[TemporalGraph]:
    with open(path, encoding="utf-8") as fh:
        return [graph_from_json(json.loads(line)) for line in fh if line.strip()]


def multiset_key(classes: Counter | Iterable[NodeClass]) -> str:
    c = classes if isinstance(classes, Counter) else Counter(classes)
    return "+".join(sorted(k.value for k in c.elements()))


def _jaccard(a: Counter, b: Counter) -> float:
    keys = set(a) | set(b)
    union = sum(max(a[k], b[k]) for k in keys)
    return sum(min(a[k], b[k]) for k in keys) / union if union else 1.0


@dataclass
class SeedDatabase:
    entries: list[TemporalGraph] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def insert(self, seed: TemporalGraph, ont: Ontology | None = None) -> int:
        if seed.flavor is not Flavor.DATABASE_SEED:
            raise GraphError("only DatabaseSeed graphs can be stored")
        validate_graph(seed, ont)
        with self._lock:
            self.entries.append(seed)
            return len(self.entries) - 1

    def __len__(self) -> int:
        return len(self.entries)

    def match(self, agents: Iterable[NodeClass], rng_seed: int) -> tuple[TemporalGraph, str]:
        """Sample an entry for ``agents``; returns (entry, rule) with rule in
        {"exact", "superset", "jaccard"}."""
        entries = list(self.entries)  # snapshot
        if not entries:
            raise GraphError("seed database is empty")
        want = Counter(agents)
        # traffic lights only count when the request names them
        counted = MOVABLE_AGENTS | set(want)
        have = [Counter({k: v for k, v in e.agent_classes().items() if k in counted}) for e in entries]
        rng = np.random.default_rng(rng_seed)
        exact = [i for i, h in enumerate(have) if h == want]
        if exact:
            return entries[exact[int(rng.integers(len(exact)))]], "exact"
        sup = [i for i, h in enumerate(have) if all(h[k] >= v for k, v in want.items())]
        if sup:
            return entries[sup[int(rng.integers(len(sup)))]], "superset"
        scores = [_jaccard(want, h) for h in have]
        return entries[int(np.argmax(scores))], "jaccard"

    def sample(self, agents: Iterable[NodeClass], rng_seed: int) -> TemporalGraph:
        return self.match(agents, rng_seed)[0]

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        index: dict[str, list[int]] = {}
        with open(d / "seeds.jsonl", "wb") as fh:
            for g in self.entries:
                index.setdefault(multiset_key(g.agent_classes()), []).append(fh.tell())
                fh.write((dumps_graph(g) + "\n").encode("utf-8"))
        with open(d / "index.json", "w", encoding="utf-8") as fh:
            json.dump(dict(sorted(index.items())), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, directory: str | Path) -> "SeedDatabase":
        d = Path(directory)
        with open(d / "index.json", encoding="utf-8") as fh:
            index = json.load(fh)
        offsets = sorted(o for offs in index.values() for o in offs)
        db = cls()
        with open(d / "seeds.jsonl", "rb") as fh:
            for off in offsets:
                fh.seek(off)
                db.entries.append(graph_from_json(json.loads(fh.readline())))
        return db


def db_insert(db: SeedDatabase, seed: TemporalGraph) -> int:
    return db.insert(seed)


def db_sample(db: SeedDatabase, agents: Iterable[NodeClass], rng_seed: int) -> TemporalGraph:
    return db.sample(agents, rng_seed)
