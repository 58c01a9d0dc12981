"""Temporal link-prediction network over augmented scene graphs.

Pipeline per (batched) graph:

1. node / edge encoders (``mlp_n``, shared ``mlp_e``) to width-1 embeddings;
   the AV-action self-loop and criticality link are also added into the ego
   embedding;
2. GAT(1->64) -> ReLU -> MLP(64->128->256) -> GAT(256->1) over the seed edges
   (both directions, implicit self edges);
3. for tau = 0..4 the candidates labelled tau are scored by the triplet
   encoder from ``[z_ego | z_edge | z_other]``, then a GCN step over that
   tau's candidate edges updates the node embeddings;
4. sigmoid on the triplet logits.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from scenegen.evaluation import MetricBundle, classification_metrics
from scenegen.graph import (
    N_FRAMES,
    FeatureVectors,
    Flavor,
    TemporalGraph,
    TripletCandidate,
    assemble_features,
    augment,
    candidate_edge,
    label_candidates,
    prune_to_seed,
    validate_graph,
)
from scenegen.nn import tensor as T
from scenegen.nn.layers import (
    ParamStore,
    gat_forward,
    gcn_forward,
    gru_cell,
    init_gat,
    init_gcn,
    init_gru,
    init_mlp,
    mlp_forward,
)
from scenegen.nn.io import load_checkpoint, save_checkpoint
from scenegen.nn.optim import AdamState, adam_step, clip_gradients
from scenegen.nn.tensor import Tensor
from scenegen.ontology import Ontology, Relation, default_ontology

log = logging.getLogger(__name__)

VARIANTS = ("mlp-gcn", "gru-gcn", "gru", "gat", "mlp")


class ModelError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    mlp_n: list[int] = field(default_factory=lambda: [22, 8, 1])
    mlp_e: list[int] = field(default_factory=lambda: [27, 8, 1])
    mlp_tr: list[int] = field(default_factory=lambda: [3, 16, 1])
    mlp_gat: list[int] = field(default_factory=lambda: [64, 128, 256])
    gat1: list[int] = field(default_factory=lambda: [1, 64])
    gat2: list[int] = field(default_factory=lambda: [256, 1])
    gcn: list[int] = field(default_factory=lambda: [1, 1])
    pe_length: int = 2
    epochs: int = 30
    rng_seed: int = 0
    threshold: float = 0.5
    variant: str = "mlp-gcn"
    positional_encoding: bool = True
    gat_edge_mode: str = "both"  # both | message | attention
    gcn_scope: str = "tau"  # tau | all
    gat_activation: bool = True
    gcn_residual: bool = True
    batch_size: int = 2
    lr: float = 0.01
    weight_decay: float = 1e-5
    clip: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.gat_edge_mode not in ("both", "message", "attention"):
            raise ModelError(f"unknown gat_edge_mode {self.gat_edge_mode!r}")
        if self.gcn_scope not in ("tau", "all"):
            raise ModelError(f"unknown gcn_scope {self.gcn_scope!r}")
        chain = [
            ("mlp_n in", self.mlp_n[0], 20 + self.pe_length),
            ("mlp_e in", self.mlp_e[0], 27),
            ("mlp_n -> gat1", self.mlp_n[-1], self.gat1[0]),
            ("gat1 -> mlp_gat", self.gat1[1], self.mlp_gat[0]),
            ("mlp_gat -> gat2", self.mlp_gat[-1], self.gat2[0]),
            ("gat2 -> gcn", self.gat2[1], self.gcn[0]),
            ("gcn width", self.gcn[0], self.gcn[1]),
            ("mlp_e -> gat edge width", self.mlp_e[-1], 1),
            ("triplet width", self.mlp_tr[0], 2 * self.gat2[1] + self.mlp_e[-1]),
            ("triplet out", self.mlp_tr[-1], 1),
        ]
        for what, got, want in chain:
            if got != want:
                raise ModelError(f"dims not chain-consistent at {what}: {got} != {want}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ModelError(f"unknown model config keys {sorted(unknown)}")
        return cls(**doc)


def init_params(cfg: ModelConfig) -> ParamStore:
    rng = np.random.default_rng(cfg.rng_seed)
    store = ParamStore()
    init_mlp(store, "mlp_n", cfg.mlp_n, rng)
    init_mlp(store, "mlp_e", cfg.mlp_e, rng)
    init_gat(store, "gat1", cfg.gat1[0], cfg.gat1[1], rng)
    init_mlp(store, "mlp_gat", cfg.mlp_gat, rng)
    init_gat(store, "gat2", cfg.gat2[0], cfg.gat2[1], rng)
    hidden = cfg.mlp_tr[1]
    if cfg.variant in ("mlp-gcn", "mlp"):
        init_mlp(store, "mlp_tr", cfg.mlp_tr, rng)
    elif cfg.variant in ("gru-gcn", "gru"):
        init_gru(store, "gru_tr", cfg.mlp_tr[0], hidden, rng)
        init_mlp(store, "gru_out", [hidden, 1], rng)
    else:
        init_mlp(store, "tr_lin", [cfg.mlp_tr[0], 1], rng)
        init_gat(store, "gat_tr", cfg.gcn[0], cfg.gcn[1], rng)
    if cfg.variant in ("mlp-gcn", "gru-gcn"):
        init_gcn(store, "gcn", cfg.gcn[0], cfg.gcn[1], rng)
    return store


# --------------------------------------------------------------------------
# samples and batches


@dataclass
class Sample:
    """An augmented graph with its candidates and assembled features."""

    graph: TemporalGraph
    candidates: list[TripletCandidate]
    features: FeatureVectors

    @property
    def labels(self) -> np.ndarray | None:
        return self.features.labels


def make_sample(scenario_or_seed: TemporalGraph, cfg: ModelConfig | None = None,
                ont: Ontology | None = None) -> Sample:
    """Prune (if given a scenario), augment, label and featurise one graph."""
    cfg = cfg or ModelConfig()
    ont = ont or default_ontology()
    if scenario_or_seed.flavor is Flavor.SCENARIO:
        seed = prune_to_seed(scenario_or_seed, keep_conditioning=True)
        aug, cands = augment(seed, ont)
        cands = label_candidates(cands, scenario_or_seed)
    else:
        aug, cands = augment(scenario_or_seed, ont)
    feats = assemble_features(aug, cands, ont, positional=cfg.positional_encoding)
    return Sample(aug, cands, feats)


@dataclass
class Batch:
    n_nodes: int
    node_features: np.ndarray
    edge_features: np.ndarray
    gat_src: np.ndarray
    gat_dst: np.ndarray
    gat_edge: np.ndarray  # row of edge_features feeding each GAT edge
    cond_edge: np.ndarray
    cond_ego: np.ndarray
    cond_node: np.ndarray  # other endpoint of each conditioning edge
    cond_node_mask: np.ndarray  # 0 for self-loops
    cand_features: np.ndarray
    cand_src: np.ndarray
    cand_dst: np.ndarray
    cand_tau: np.ndarray
    cand_slot: np.ndarray
    n_slots: int
    labels: np.ndarray | None


def make_batch(samples: Sequence[Sample]) -> Batch:
    parts = {k: [] for k in ("nf", "ef", "gs", "gd", "ge", "ce", "cg", "cn", "cm", "cf", "cs", "cd", "ct", "sl", "y")}
    node_off = edge_off = slot_off = 0
    have_labels = True
    for s in samples:
        f = s.features
        nonself = f.edge_src != f.edge_dst
        m = len(f.edge_src)
        parts["nf"].append(f.node_features)
        parts["ef"].append(f.edge_features)
        parts["gs"].append(np.concatenate([f.edge_src, f.edge_dst[nonself]]) + node_off)
        parts["gd"].append(np.concatenate([f.edge_dst, f.edge_src[nonself]]) + node_off)
        parts["ge"].append(np.concatenate([np.arange(m), np.flatnonzero(nonself)]) + edge_off)
        cond = np.flatnonzero(f.conditioning)
        parts["ce"].append(cond + edge_off)
        parts["cg"].append(np.full(len(cond), f.ego + node_off, dtype=np.int64))
        other = np.where(f.edge_src[cond] == f.ego, f.edge_dst[cond], f.edge_src[cond])
        parts["cn"].append(other + node_off)
        parts["cm"].append((other != f.ego).astype(np.float64))
        parts["cf"].append(f.candidate_features)
        parts["cs"].append(f.cand_src + node_off)
        parts["cd"].append(f.cand_dst + node_off)
        parts["ct"].append(f.cand_tau)
        parts["sl"].append(f.cand_slot + slot_off)
        if f.labels is None:
            have_labels = have_labels and len(f.cand_tau) == 0
        else:
            parts["y"].append(f.labels)
        node_off += f.node_features.shape[0]
        edge_off += m
        slot_off += int(f.cand_slot.max()) + 1 if len(f.cand_slot) else 0
    cat = lambda k, dt=None: np.concatenate(parts[k]).astype(dt) if dt else np.concatenate(parts[k])
    return Batch(
        n_nodes=node_off,
        node_features=cat("nf"),
        edge_features=np.concatenate(parts["ef"]).reshape(-1, 27),
        gat_src=cat("gs", np.int64),
        gat_dst=cat("gd", np.int64),
        gat_edge=cat("ge", np.int64),
        cond_edge=cat("ce", np.int64),
        cond_ego=cat("cg", np.int64),
        cond_node=cat("cn", np.int64),
        cond_node_mask=cat("cm", np.float64),
        cand_features=np.concatenate(parts["cf"]).reshape(-1, 27),
        cand_src=cat("cs", np.int64),
        cand_dst=cat("cd", np.int64),
        cand_tau=cat("ct", np.int64),
        cand_slot=cat("sl", np.int64),
        n_slots=slot_off,
        labels=np.concatenate(parts["y"]) if have_labels and parts["y"] else None,
    )


# --------------------------------------------------------------------------
# forward


def _encode_nodes(store: ParamStore, cfg: ModelConfig, b: Batch) -> tuple[Tensor, Tensor]:
    n = b.n_nodes
    zn = mlp_forward(store, "mlp_n", Tensor(b.node_features), cfg.mlp_n)
    za = mlp_forward(store, "mlp_e", Tensor(b.edge_features), cfg.mlp_e)
    ze = mlp_forward(store, "mlp_e", Tensor(b.cand_features), cfg.mlp_e)
    if len(b.cond_edge):
        fused = T.gather(za, b.cond_edge)
        if len(b.cond_node):
            # the criticality link's edge vector is the same for every level;
            # the level itself lives in the criticality node's class
            fused = fused + T.gather(zn, b.cond_node) * b.cond_node_mask[:, None]
        zn = zn + T.segment_sum(fused, b.cond_ego, n)
    e = T.gather(za, b.gat_edge)
    h = gat_forward(store, "gat1", zn, e, b.gat_src, b.gat_dst, cfg.gat_edge_mode)
    if cfg.gat_activation:
        h = T.relu(h)
    h = mlp_forward(store, "mlp_gat", h, cfg.mlp_gat)
    h = gat_forward(store, "gat2", h, e, b.gat_src, b.gat_dst, cfg.gat_edge_mode)
    return h, ze


def _triplets(h: Tensor, ze: Tensor, b: Batch, idx: np.ndarray) -> Tensor:
    return T.concat([T.gather(h, b.cand_src[idx]), T.gather(ze, idx), T.gather(h, b.cand_dst[idx])], axis=1)


def _propagate(store: ParamStore, cfg: ModelConfig, h: Tensor, ze: Tensor, b: Batch,
               tau: int, idx: np.ndarray) -> Tensor:
    """Node update over the candidate edges of one tau step."""
    if cfg.variant in ("mlp-gcn", "gru-gcn"):
        scope = idx if cfg.gcn_scope == "tau" else np.flatnonzero(b.cand_tau <= tau)
        upd = gcn_forward(store, "gcn", h, b.cand_src[scope], b.cand_dst[scope])
        return h + upd if cfg.gcn_residual else upd
    if cfg.variant == "gat":
        s, d = b.cand_src[idx], b.cand_dst[idx]
        e2 = T.concat([T.gather(ze, idx), T.gather(ze, idx)], axis=0)
        return gat_forward(store, "gat_tr", h, e2, np.concatenate([s, d]), np.concatenate([d, s]))
    return h


def forward_logits(store: ParamStore, cfg: ModelConfig, b: Batch) -> Tensor:
    """Triplet logits of shape (n_candidates, 1) in candidate order."""
    h, ze = _encode_nodes(store, cfg, b)
    c = len(b.cand_tau)
    if c == 0:
        return Tensor(np.zeros((0, 1)))
    if cfg.variant == "mlp":
        return mlp_forward(store, "mlp_tr", _triplets(h, ze, b, np.arange(c)), cfg.mlp_tr)

    pieces: list[Tensor] = []
    order: list[np.ndarray] = []
    hidden = None
    if cfg.variant in ("gru-gcn", "gru"):
        hidden = Tensor(np.zeros((b.n_slots, cfg.mlp_tr[1])))
    for tau in range(N_FRAMES):
        idx = np.flatnonzero(b.cand_tau == tau)
        if len(idx) == 0:
            continue
        x = _triplets(h, ze, b, idx)
        if cfg.variant == "mlp-gcn":
            g = mlp_forward(store, "mlp_tr", x, cfg.mlp_tr)
        elif hidden is not None:
            slots = b.cand_slot[idx]
            new = gru_cell(store, "gru_tr", x, T.gather(hidden, slots))
            g = mlp_forward(store, "gru_out", new, [cfg.mlp_tr[1], 1])
            keep = np.ones(b.n_slots, dtype=bool)
            keep[slots] = False
            # carry untouched slots, replace the updated ones
            hidden = T.segment_sum(new, slots, b.n_slots) + T.mul(hidden, keep[:, None].astype(float))
        else:
            g = mlp_forward(store, "tr_lin", x, [cfg.mlp_tr[0], 1])
        pieces.append(g)
        order.append(idx)
        h = _propagate(store, cfg, h, ze, b, tau, idx)
    perm = np.concatenate(order)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return T.gather(T.concat(pieces, axis=0), inv)


def forward(store: ParamStore, cfg: ModelConfig, batch: Batch | Sample | Sequence[Sample]) -> Tensor:
    """Per-candidate probabilities, shape (n_candidates, 1)."""
    if isinstance(batch, Sample):
        batch = make_batch([batch])
    elif not isinstance(batch, Batch):
        batch = make_batch(list(batch))
    return T.sigmoid(forward_logits(store, cfg, batch))


def loss(probabilities: Tensor, labels: np.ndarray) -> Tensor:
    labels = np.asarray(labels, dtype=np.float64)
    if probabilities.data.size != labels.size:
        raise ModelError(f"{probabilities.data.size} probabilities vs {labels.size} labels")
    return T.bce_mean(probabilities, labels)


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    params: ParamStore
    history: list[dict]
    best_epoch: int
    optimizer: AdamState


def predict_proba(store: ParamStore, cfg: ModelConfig, samples: Sequence[Sample], chunk: int = 64) -> list[np.ndarray]:
    out = []
    for i in range(0, len(samples), chunk):
        part = samples[i : i + chunk]
        p = forward(store, cfg, make_batch(part)).data.reshape(-1)
        sizes = np.cumsum([len(s.candidates) for s in part])[:-1]
        out.extend(np.split(p, sizes))
    return out


def evaluate_classification(store: ParamStore, cfg: ModelConfig, samples: Sequence[Sample]) -> MetricBundle:
    """Thresholded candidate predictions (before exclusion filtering) vs labels."""
    if not samples:
        raise ModelError("evaluation needs at least one sample")
    probs = np.concatenate(predict_proba(store, cfg, samples))
    gold = np.concatenate([s.labels for s in samples])
    return classification_metrics((probs >= cfg.threshold).astype(int), gold.astype(int))


def train(cfg: ModelConfig, train_set: Sequence[Sample], val_set: Sequence[Sample] = (),
          params: ParamStore | None = None, progress=None) -> TrainResult:
    if not train_set:
        raise TrainingError("training set is empty")
    if any(s.labels is None for s in train_set):
        raise TrainingError("training samples must be labelled")
    store = params or init_params(cfg)
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.rng_seed, 1])
    history: list[dict] = []
    best_f1, best_epoch, best_snap = -1.0, 0, store.snapshot()
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(train_set))
        total, count = 0.0, 0
        for i in range(0, len(perm), cfg.batch_size):
            b = make_batch([train_set[j] for j in perm[i : i + cfg.batch_size]])
            if len(b.cand_tau) == 0:
                continue
            l = loss(T.sigmoid(forward_logits(store, cfg, b)), b.labels)
            value = float(l.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {i // cfg.batch_size}")
            store.zero_grad()
            l.backward()
            clip_gradients(store, cfg.clip)
            adam_step(store, state)
            total += value * len(b.cand_tau)
            count += len(b.cand_tau)
        rec = {"epoch": epoch, "train_loss": total / max(count, 1)}
        if val_set:
            rec["val_f1"] = evaluate_classification(store, cfg, val_set).f1
            if rec["val_f1"] > best_f1:
                best_f1, best_epoch, best_snap = rec["val_f1"], epoch, store.snapshot()
        else:
            rec["val_f1"] = float("nan")
        history.append(rec)
        if progress is not None:
            progress(rec)
        log.debug("epoch %d loss %.5f val_f1 %.4f", epoch, rec["train_loss"], rec["val_f1"])
    if val_set and history:
        store.restore(best_snap)
    else:
        best_epoch = cfg.epochs
    return TrainResult(store, history, best_epoch, state)


# --------------------------------------------------------------------------
# generation


@dataclass
class Prediction:
    candidates: list[TripletCandidate]  # with probabilities
    selected: list[TripletCandidate]
    graph: TemporalGraph


def _group_key(c: TripletCandidate, ont: Ontology) -> tuple:
    if c.relation is Relation.IS_IN:
        return ("is_in", c.tau)
    group = ont.exclusion_group(c.relation)
    return (group, c.dst, c.tau) if group else ("single", c.dst, c.relation, c.tau)


def filter_candidates(cands: Sequence[TripletCandidate], threshold: float,
                      ont: Ontology | None = None) -> list[TripletCandidate]:
    """Keep the most likely relation per exclusion group and (other, tau) slot,
    and the most likely ego location per tau; drop anything below threshold."""
    ont = ont or default_ontology()
    best: dict[tuple, TripletCandidate] = {}
    for c in cands:
        key = _group_key(c, ont)
        cur = best.get(key)
        if cur is None or c.probability > cur.probability:
            best[key] = c
    return [c for c in cands if c.probability >= threshold and best[_group_key(c, ont)] is c]


def predict_detailed(store: ParamStore, seed: TemporalGraph, cfg: ModelConfig,
                     ont: Ontology | None = None) -> Prediction:
    ont = ont or default_ontology()
    validate_graph(seed, ont)
    sample = make_sample(seed, cfg, ont)
    probs = forward(store, cfg, sample).data.reshape(-1)
    cands = [c._replace(probability=float(p)) for c, p in zip(sample.candidates, probs)]
    chosen = filter_candidates(cands, cfg.threshold, ont)
    new_edges = tuple(candidate_edge(c, sample.graph, ont) for c in chosen)
    out = TemporalGraph(
        nodes=seed.nodes,
        edges=seed.edges + new_edges,
        av_action=seed.av_action,
        criticality=seed.criticality,
        flavor=Flavor.SCENARIO,
        frame_indices=seed.frame_indices,
    )
    validate_graph(out, ont)
    return Prediction(cands, chosen, out)


def predict(store: ParamStore, seed: TemporalGraph, cfg: ModelConfig, ont: Ontology | None = None) -> TemporalGraph:
    return predict_detailed(store, seed, cfg, ont).graph



def save_model(path, store: ParamStore, cfg: ModelConfig, state: AdamState | None = None) -> None:
    save_checkpoint(path, store, state, cfg.to_json())


def load_model(path) -> tuple[ParamStore, ModelConfig]:
    """Rebuild the parameter store from the config echoed in the checkpoint."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg = ModelConfig.from_json(doc.get("config") or {})
    store = init_params(cfg)
    load_checkpoint(path, store)
    return store, cfg
