"""Classification metrics, statement-level factual correctness and the
scenario consistency rate, plus JSON / plain-text reports."""

from __future__ import annotations

import json
import re
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from scenegen.ontology import NodeClass, Relation

EGO_PHRASE = "the ego-vehicle"

# one fixed phrase per relation; phrases must stay distinct for parsing
RELATION_PHRASES: dict[Relation, str] = {
    Relation.IS_IN: "is in",
    Relation.MOVE: "is moving",
    Relation.BRAKE: "is braking",
    Relation.STOP: "is stopped",
    Relation.INDICATE_LEFT: "is indicating left",
    Relation.INDICATE_RIGHT: "is indicating right",
    Relation.TURN_LEFT: "is turning left",
    Relation.TURN_RIGHT: "is turning right",
    Relation.CROSS: "is crossing",
    Relation.RED: "is showing red",
    Relation.AMBER: "is showing amber",
    Relation.GREEN: "is showing green",
    Relation.MOVING_AWAY: "is moving away from",
    Relation.MOVING_TOWARDS: "is moving towards",
    Relation.MUST_STOP: "must stop at",
    Relation.NEAR_COLLISION: "is in near collision with",
    Relation.NEAR: "is near",
    Relation.VISIBLE: "is visible to",
    Relation.AV_MOVE: "performs move",
    Relation.AV_MOVE_LEFT: "performs move left",
    Relation.AV_MOVE_RIGHT: "performs move right",
    Relation.AV_OVERTAKE: "performs overtake",
    Relation.AV_STOP: "performs stop",
    Relation.AV_TURN_LEFT: "performs turn left",
    Relation.AV_TURN_RIGHT: "performs turn right",
    Relation.CRITICALITY_LINK: "is the criticality of",
}
_PHRASE_TO_RELATION = {v: k for k, v in RELATION_PHRASES.items()}
assert len(_PHRASE_TO_RELATION) == len(RELATION_PHRASES)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class MetricBundle:
    f1: float
    accuracy: float
    precision: float
    recall: float
    tp: int
    fp: int
    tn: int
    fn: int
    undefined: tuple[str, ...] = ()  # names of ratios whose denominator was zero

    def to_json(self) -> dict:
        d = asdict(self)
        d["undefined"] = list(self.undefined)
        return d


def _ratio(num: int, den: int, name: str, undefined: list[str]) -> float:
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def metrics_from_counts(tp: int, fp: int, tn: int, fn: int) -> MetricBundle:
    undefined: list[str] = []
    p = _ratio(tp, tp + fp, "precision", undefined)
    r = _ratio(tp, tp + fn, "recall", undefined)
    acc = _ratio(tp + tn, tp + fp + tn + fn, "accuracy", undefined)
    if p + r == 0:
        undefined.append("f1")
        f1 = 0.0
    else:
        f1 = 2 * p * r / (p + r)
    return MetricBundle(f1, acc, p, r, tp, fp, tn, fn, tuple(undefined))


def classification_metrics(pred, gold) -> MetricBundle:
    pred = np.asarray(pred).astype(bool).reshape(-1)
    gold = np.asarray(gold).astype(bool).reshape(-1)
    if pred.shape != gold.shape:
        raise EvaluationError(f"length mismatch: {pred.size} predictions vs {gold.size} labels")
    if pred.size == 0:
        raise EvaluationError("metrics need at least one prediction")
    tp = int(np.sum(pred & gold))
    fp = int(np.sum(pred & ~gold))
    fn = int(np.sum(~pred & gold))
    tn = int(pred.size - tp - fp - fn)
    return metrics_from_counts(tp, fp, tn, fn)


# --------------------------------------------------------------------------
# statements


def _entity(cls: NodeClass, track: int) -> str:
    return EGO_PHRASE if cls is NodeClass.EGO else f"{cls.value} {track}"


def render_statement(time: int, src_cls: NodeClass, src_track: int, rel: Relation,
                     dst_cls: NodeClass, dst_track: int) -> str:
    return (f"At time {time}: {_entity(src_cls, src_track)} {RELATION_PHRASES[rel]} "
            f"{_entity(dst_cls, dst_track)}.")


def graph_to_statements(g) -> frozenset[str]:
    """One canonical sentence per edge; time is the absolute frame index."""
    out = set()
    for e in g.edges:
        s, d = g.nodes[e.src], g.nodes[e.dst]
        out.add(render_statement(g.frame_indices[e.tau], s.cls, s.track, e.relation, d.cls, d.track))
    return frozenset(out)


_ENTITY_RE = r"(the ego-vehicle|[A-Z][A-Za-z]* \d+)"
_PHRASE_RE = "|".join(re.escape(p) for p in sorted(_PHRASE_TO_RELATION, key=len, reverse=True))
_STATEMENT_RE = re.compile(rf"^At time (\d+): {_ENTITY_RE} ({_PHRASE_RE}) {_ENTITY_RE}\.$")


@dataclass(frozen=True)
class ParsedStatement:
    time: int
    src_cls: NodeClass
    src_track: int
    relation: Relation
    dst_cls: NodeClass
    dst_track: int


def _parse_entity(text: str) -> tuple[NodeClass, int]:
    if text == EGO_PHRASE:
        return NodeClass.EGO, 0
    name, track = text.rsplit(" ", 1)
    return NodeClass.parse(name), int(track)


def parse_statement(text: str) -> ParsedStatement:
    m = _STATEMENT_RE.match(text)
    if not m:
        raise EvaluationError(f"not a canonical statement: {text!r}")
    sc, st = _parse_entity(m.group(2))
    dc, dt = _parse_entity(m.group(4))
    return ParsedStatement(int(m.group(1)), sc, st, _PHRASE_TO_RELATION[m.group(3)], dc, dt)


def factual_correctness(pred: Iterable[str], gold: Iterable[str]) -> float:
    pred, gold = set(pred), set(gold)
    if not pred and not gold:
        return 1.0
    tp = len(pred & gold)
    fp = len(pred - gold)
    fn = len(gold - pred)
    return 2 * tp / (2 * tp + fp + fn)


def token_jaccard(pred: Iterable[str], gold: Iterable[str]) -> float:
    """Bag-free token overlap of the two statement sets; the default stand-in
    for an embedding-based semantic scorer."""
    tok = lambda ss: {t for s in ss for t in re.findall(r"[\w-]+", s.lower())}
    a, b = tok(pred), tok(gold)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


SemanticScorer = Callable[[Iterable[str], Iterable[str]], float]


def statement_scores(pred_graph, gold_graph, semantic: SemanticScorer = token_jaccard) -> dict:
    p, g = graph_to_statements(pred_graph), graph_to_statements(gold_graph)
    return {"factual_correctness": factual_correctness(p, g), "semantic_similarity": semantic(p, g)}


# --------------------------------------------------------------------------
# scenario consistency


CRITICALITY_ORDER = (Relation.NEAR_COLLISION, Relation.NEAR, Relation.VISIBLE)


@dataclass
class SCRReport:
    overall: float
    per_group: dict[str, float]
    counts: dict[str, tuple[int, int]] = field(default_factory=dict)  # group -> (matched, total)

    def to_json(self) -> dict:
        return {"overall": self.overall, "per_group": self.per_group,
                "counts": {k: list(v) for k, v in self.counts.items()}}


def scenario_consistency_rate(results: Sequence[tuple[Relation, Relation]]) -> SCRReport:
    if not results:
        raise EvaluationError("scenario consistency needs at least one run")
    hits: dict[Relation, list[int]] = defaultdict(lambda: [0, 0])
    for requested, realized in results:
        h = hits[requested]
        h[0] += int(requested == realized)
        h[1] += 1
    order = [c for c in CRITICALITY_ORDER if c in hits] + [c for c in hits if c not in CRITICALITY_ORDER]
    per = {c.value: 100.0 * hits[c][0] / hits[c][1] for c in order}
    counts = {c.value: (hits[c][0], hits[c][1]) for c in order}
    matched = sum(h[0] for h in hits.values())
    return SCRReport(100.0 * matched / len(results), per, counts)


# --------------------------------------------------------------------------
# reports


def to_json_report(obj) -> str:
    if hasattr(obj, "to_json"):
        obj = obj.to_json()
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def format_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Right-aligned plain-text table; floats get three decimals."""
    cell = lambda v: f"{v:.3f}" if isinstance(v, float) else str(v)
    body = [[cell(v) for v in r] for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(header)]
    line = lambda r: "  ".join(v.rjust(w) for v, w in zip(r, widths))
    return "\n".join([line(header), line(["-" * w for w in widths]), *map(line, body)]) + "\n"


def metrics_table(named: dict[str, MetricBundle]) -> str:
    return format_table(["model", "F1", "Accuracy", "Precision", "Recall"],
                        [[k, m.f1, m.accuracy, m.precision, m.recall] for k, m in named.items()])


def scr_table(named: dict[str, SCRReport]) -> str:
    groups = [c.value for c in CRITICALITY_ORDER]
    rows = [[k, *(r.per_group.get(g, float("nan")) for g in groups), r.overall] for k, r in named.items()]
    return format_table(["policy", *groups, "overall"], rows)
