"""One test per acceptance criterion, each at its stated tolerance."""

import json
import math
import time
from collections import Counter

import numpy as np
import pytest

from scenegen import model as M
from scenegen.cli import main
from scenegen.evaluation import classification_metrics, factual_correctness, graph_to_statements
from scenegen.graph import (
    Edge,
    Flavor,
    Node,
    TemporalGraph,
    augment,
    build_frame_graph,
    candidate_edge,
    derive_criticality,
    ego_edge_key,
    is_conditioning,
    label_candidates,
    prune_to_seed,
    scenario_from_annotations,
    slice_tau,
    validate_graph,
)
from scenegen.ingest import SynthConfig, generate_synthetic
from scenegen.nn import tensor as T
from scenegen.nn.gradcheck import finite_difference_gradient, max_relative_error
from scenegen.nn.layers import ParamStore, gat_forward, gcn_forward, mlp_forward
from scenegen.nn.optim import mean_bce
from scenegen.nn.tensor import Tensor
from scenegen.ontology import PROXIMITY, NodeClass, Relation, default_ontology
from scenegen.playback import batch_consistency, head_on_family, oracle_suite, run
from scenegen.scenario import emit_openscenario, graph_to_script, validate_openscenario

ONT = default_ontology()


def _graphs(n, **kw):
    return [scenario_from_annotations(f) for f in generate_synthetic(SynthConfig(n_scenarios=n, **kw))]


# ---------------------------------------------------------------- 1


def _layer_error(cfg_store, prefix, build, inputs):
    store = ParamStore()
    for k, p in cfg_store.items():
        if k.startswith(prefix + "."):
            store.add(k, p.data.copy())
    for k, v in inputs.items():
        store.add(k, v)
    w = np.random.default_rng(1).normal(size=build(store).shape)
    lf = lambda: T.total(build(store) * w)
    l = lf()
    store.zero_grad()
    l.backward()
    analytic = {k: p.grad.copy() for k, p in store.items()}
    numeric = finite_difference_gradient(lambda: float(lf().data), store, max_per_param=50)
    return max_relative_error(analytic, numeric)


def test_1_gradient_oracle(report):
    t0 = time.perf_counter()
    g = next(g for g in _graphs(200, rng_seed=21) if len(g.nodes) == 6)
    cfg = M.ModelConfig()
    store = M.init_params(cfg)
    sample = M.make_sample(g, cfg)
    assert sample.graph.flavor is Flavor.AUGMENTED and len(sample.graph.nodes) == 6

    lf = lambda: M.loss(M.forward(store, cfg, sample), sample.labels)
    l = lf()
    store.zero_grad()
    l.backward()
    analytic = {k: p.grad.copy() for k, p in store.items()}
    numeric = finite_difference_gradient(lambda: float(lf().data), store, h=1e-5, max_per_param=8)
    full = max_relative_error(analytic, numeric)

    rng = np.random.default_rng(0)
    n, m = 6, 7
    src, dst = rng.integers(0, n, m), rng.integers(0, n, m)
    layers = {
        "mlp_n": (lambda s: mlp_forward(s, "mlp_n", s["x"], cfg.mlp_n), {"x": rng.normal(size=(n, 22))}),
        "mlp_e": (lambda s: mlp_forward(s, "mlp_e", s["x"], cfg.mlp_e), {"x": rng.normal(size=(m, 27))}),
        "gat1": (lambda s: gat_forward(s, "gat1", s["h"], s["e"], src, dst),
                 {"h": rng.normal(size=(n, 1)), "e": rng.normal(size=(m, 1))}),
        "mlp_gat": (lambda s: mlp_forward(s, "mlp_gat", s["x"], cfg.mlp_gat), {"x": rng.normal(size=(n, 64))}),
        "gat2": (lambda s: gat_forward(s, "gat2", s["h"], s["e"], src, dst),
                 {"h": rng.normal(size=(n, 256)), "e": rng.normal(size=(m, 1))}),
        "mlp_tr": (lambda s: mlp_forward(s, "mlp_tr", s["x"], cfg.mlp_tr), {"x": rng.normal(size=(5, 3))}),
        "gcn": (lambda s: gcn_forward(s, "gcn", s["h"], src, dst), {"h": rng.normal(size=(n, 1))}),
    }
    per_layer = {name: _layer_error(store, name, b, x) for name, (b, x) in layers.items()}
    elapsed = time.perf_counter() - t0

    worst = max(per_layer.values())
    ok = full < 1e-4 and worst < 1e-6 and elapsed < 10.0
    report(1, "gradient oracle", ok, f"full {full:.2e}, worst layer {worst:.2e}, {elapsed:.1f}s")
    assert full < 1e-4
    assert worst < 1e-6, per_layer
    assert elapsed < 10.0


# ---------------------------------------------------------------- 2


def test_2_overfit_fixture(report):
    t0 = time.perf_counter()
    graphs = _graphs(32, noise=0.0, rng_seed=0)
    cfg = M.ModelConfig(epochs=500)
    samples = [M.make_sample(g, cfg) for g in graphs]
    res = M.train(cfg, samples)
    probs = np.concatenate(M.predict_proba(res.params, cfg, samples))
    labels = np.concatenate([s.labels for s in samples])
    final_loss = mean_bce(labels, probs)
    f1 = M.evaluate_classification(res.params, cfg, samples).f1
    elapsed = time.perf_counter() - t0

    ok = f1 >= 0.95 and final_loss < 0.05 and elapsed < 120.0
    report(2, "overfit 32-scenario fixture", ok, f"F1 {f1:.4f}, loss {final_loss:.4f}, {elapsed:.0f}s")
    assert f1 >= 0.95
    assert final_loss < 0.05
    assert elapsed < 120.0


# ---------------------------------------------------------------- 3


def test_3_generalization(report):
    t0 = time.perf_counter()
    graphs = _graphs(1300, rng_seed=11)
    cfg = M.ModelConfig(epochs=30)
    samples = [M.make_sample(g, cfg) for g in graphs]
    train, val, test = samples[:1000], samples[1000:1200], samples[1200:]
    res = M.train(cfg, train, val)
    m = M.evaluate_classification(res.params, cfg, test)
    elapsed = time.perf_counter() - t0

    ok = m.f1 >= 0.70 and m.recall >= 0.80 and elapsed < 900.0
    report(3, "generalization 1000/200/100", ok,
           f"test F1 {m.f1:.3f}, recall {m.recall:.3f}, best epoch {res.best_epoch}, {elapsed:.0f}s")
    assert m.f1 >= 0.70
    assert m.recall >= 0.80
    assert elapsed < 900.0


# ---------------------------------------------------------------- 4


def test_4_ontology_guarantees(report):
    seeds = [prune_to_seed(g) for g in _graphs(50, rng_seed=31, max_agents=4)]
    invalid = violations = added = 0
    for i in range(1000):
        cfg = M.ModelConfig(rng_seed=10_000 + i)
        seed = seeds[i % len(seeds)]
        out = M.predict(M.init_params(cfg), seed, cfg)
        new = out.edges[len(seed.edges):]
        added += len(new)
        for e in out.edges:
            if not ONT.validate_triplet(out.nodes[e.src].cls, e.relation, out.nodes[e.dst].cls):
                invalid += 1
        slots = Counter()
        for e in new:
            group = ONT.exclusion_group(e.relation)
            if group is not None:
                other = e.dst if e.src == 0 else e.src
                slots[(group, other, e.tau)] += 1
            if e.relation is Relation.IS_IN:
                slots[("ego location", e.tau)] += 1
        violations += sum(c - 1 for c in slots.values() if c > 1)
        validate_graph(out)

    ok = invalid == 0 and violations == 0
    report(4, "ontology hard guarantees", ok,
           f"1000 predictions, {added} predicted edges, {invalid} invalid, {violations} exclusion violations")
    assert added > 0
    assert invalid == 0
    assert violations == 0


# ---------------------------------------------------------------- 5


def _severity_oracle(frames):
    worst = -1
    for f in frames:
        for e in f.entities:
            if e.proximity is not None:
                rank = {Relation.VISIBLE: 0, Relation.NEAR: 1, Relation.NEAR_COLLISION: 2}[e.proximity]
            else:
                rank = 2 if e.distance_m < 5.0 else 1 if e.distance_m <= 10.0 else 0
            worst = max(worst, rank)
    return [Relation.VISIBLE, Relation.NEAR, Relation.NEAR_COLLISION][max(worst, 0)]


def test_5_graph_round_trip(report):
    t0 = time.perf_counter()
    scenarios = generate_synthetic(SynthConfig(n_scenarios=10_000, rng_seed=5))
    label_errors = slice_errors = crit_errors = 0
    for frames in scenarios:
        g = scenario_from_annotations(frames)
        aug, cands = augment(prune_to_seed(g))
        labelled = label_candidates(cands, g)
        got = {ego_edge_key(candidate_edge(c, aug), 0) for c in labelled if c.label}
        gold = {ego_edge_key(e, 0) for e in g.edges if 0 in (e.src, e.dst) and not is_conditioning(e)}
        label_errors += got != gold
        for tau, fr in enumerate(frames):
            fg = build_frame_graph(fr)
            sl = slice_tau(g, tau)
            used = {0} | {s for s, _, _ in fg.edges} | {o for _, _, o in fg.edges}
            slice_errors += set(sl.edges) != set(fg.edges) or sl.nodes != {t: fg.nodes[t] for t in used}
        crit_errors += derive_criticality(g) is not _severity_oracle(frames)
        crit_errors += g.criticality is not _severity_oracle(frames)
    elapsed = time.perf_counter() - t0

    ok = label_errors == slice_errors == crit_errors == 0
    report(5, "graph pipeline round trip", ok,
           f"10000 scenarios, {label_errors} label / {slice_errors} slice / {crit_errors} criticality "
           f"mismatches, {elapsed:.0f}s")
    assert label_errors == 0
    assert slice_errors == 0
    assert crit_errors == 0


# ---------------------------------------------------------------- 6


def test_6_loss_and_metric_oracles(report):
    ln2 = 0.6931471805599453
    cases = [
        (([1], [0.5]), ln2),
        (([0], [0.5]), ln2),
        (([1, 0], [0.5, 0.5]), ln2),
        (([1, 1, 0, 0], [0.5, 0.5, 0.5, 0.5]), ln2),
        (([1], [math.e ** -1]), 1.0),
        (([1, 0], [0.25, 0.75]), -math.log(0.25)),
    ]
    bce_err = max(abs(mean_bce(y, p) - want) for (y, p), want in cases)
    tensor_err = max(abs(float(T.bce_mean(Tensor(np.array(p)[:, None]), y).data) - want) for (y, p), want in cases)

    rng = np.random.default_rng(6)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        pred, gold = rng.integers(0, 2, n).tolist(), rng.integers(0, 2, n).tolist()
        tp = fp = tn = fn = 0
        for p, g in zip(pred, gold):
            if p and g:
                tp += 1
            elif p:
                fp += 1
            elif g:
                fn += 1
            else:
                tn += 1
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        acc = (tp + tn) / n
        m = classification_metrics(pred, gold)
        mismatches += (m.tp, m.fp, m.tn, m.fn, m.precision, m.recall, m.f1, m.accuracy) != (
            tp, fp, tn, fn, prec, rec, f1, acc)

    ok = bce_err <= 1e-12 and tensor_err <= 1e-12 and mismatches == 0
    report(6, "loss and metric oracles", ok,
           f"BCE error {bce_err:.1e} / {tensor_err:.1e}, {mismatches} metric mismatches in 1000 vectors")
    assert bce_err <= 1e-12 and tensor_err <= 1e-12
    assert mismatches == 0


# ---------------------------------------------------------------- 7


def test_7_statement_metric(report):
    nodes = (Node(0, 0, NodeClass.EGO), Node(1, 1, NodeClass.PEDESTRIAN))
    g = TemporalGraph(nodes, (Edge(1, 0, Relation.NEAR, 0),), flavor=Flavor.DATABASE_SEED,
                      frame_indices=(42, 43, 44, 45, 46))
    statements = graph_to_statements(g)
    template_ok = statements == {"At time 42: Pedestrian 1 is near the ego-vehicle."}

    gold = {"s1", "s2", "s3", "s4"}
    pairs = [
        (gold | {"spurious"}, gold, 8 / 9),  # tp 4, fp 1, fn 0
        ({"s1", "s2"}, gold, 2 / 3),  # tp 2, fp 0, fn 2
        ({"s1", "x", "y"}, {"s1", "s2"}, 2 / 5),  # tp 1, fp 2, fn 1
    ]
    err = max(abs(factual_correctness(p, q) - want) for p, q, want in pairs)

    ok = template_ok and err <= 1e-12
    report(7, "statement metric", ok, f"template {'exact' if template_ok else 'differs'}, FC error {err:.1e}")
    assert template_ok, statements
    assert err <= 1e-12


# ---------------------------------------------------------------- 8


def test_8_emitter(report):
    seeds = [prune_to_seed(g) for g in _graphs(100, rng_seed=41, max_agents=4)]
    invalid = nondeterministic = 0
    for i, seed in enumerate(seeds):
        cfg = M.ModelConfig(rng_seed=500 + i, threshold=0.4)
        g = M.predict(M.init_params(cfg), seed, cfg)
        hand = "right" if i % 2 else "left"
        xml = emit_openscenario(graph_to_script(g, handedness=hand))
        invalid += bool(validate_openscenario(xml))
        nondeterministic += emit_openscenario(graph_to_script(g, handedness=hand)) != xml

    ok = invalid == 0 and nondeterministic == 0
    report(8, "emitter", ok, f"100 predicted graphs, {invalid} invalid, {nondeterministic} non-deterministic")
    assert invalid == 0
    assert nondeterministic == 0


# ---------------------------------------------------------------- 9


def test_9_playback(report):
    rep, _ = batch_consistency(oracle_suite(), "normal")
    scripts = oracle_suite() + head_on_family()
    first = [run(s, "normal", rng_seed=3).trajectory_csv() for s in scripts]
    second = [run(s, "normal", rng_seed=3).trajectory_csv() for s in scripts]
    deterministic = first == second
    family = head_on_family()
    margins = [(run(s, "cautious", record=False).min_distance, run(s, "aggressive", record=False).min_distance)
               for s in family]
    monotone = sum(c >= a for c, a in margins)

    per_group_ok = rep.per_group == {"NearCollision": 100.0, "Near": 100.0, "Visible": 100.0}
    ok = per_group_ok and deterministic and monotone == len(family) == 20
    report(9, "playback", ok,
           f"oracle SCR {rep.per_group}, deterministic {deterministic}, monotone {monotone}/{len(family)}")
    assert per_group_ok
    assert deterministic
    assert monotone == len(family) == 20


# ---------------------------------------------------------------- 10


def test_10_end_to_end_demo(tmp_path, report, capsys):
    t0 = time.perf_counter()
    out = str(tmp_path)
    assert main(["--out-dir", out, "--seed", "0", "synth", "--n", "400"]) == 0
    assert main(["--out-dir", out, "--seed", "0", "train", "--epochs", "8"]) == 0
    assert main(["--out-dir", out, "--seed", "0", "generate", "--checkpoint", f"{out}/checkpoint.json",
                 "--even", "30"]) == 0
    scripts = sorted(str(p) for p in (tmp_path / "generated").glob("*.script.json"))
    assert main(["--out-dir", out, "emit", *scripts]) == 0
    assert main(["--out-dir", out, "play", *scripts, "--policy", "normal"]) == 0
    elapsed = time.perf_counter() - t0

    xosc = list((tmp_path / "xosc").glob("*.xosc"))
    scr = json.loads((tmp_path / "scr.json").read_text())["policies"]["normal"]
    requested = Counter(r["requested"] for r in json.loads((tmp_path / "scr.json").read_text())["runs"])
    ok = len(scripts) == 30 and len(xosc) == 30 and scr["overall"] >= 60.0 and elapsed < 1200
    report(10, "end-to-end demo", ok, f"{len(xosc)} xosc files, normal SCR {scr['overall']:.1f}% "
                                      f"{scr['per_group']}, {elapsed:.0f}s")
    assert set(requested.values()) == {10} and set(requested) == {c.value for c in PROXIMITY}
    assert len(xosc) == 30
    assert scr["overall"] >= 60.0
    assert elapsed < 1200


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
