"""``scenegen`` command line: synth, ingest, build-graphs, train, eval,
generate, emit, play, metrics."""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

log = logging.getLogger("scenegen")

BAND_KEYS = {"near_collision": "NearCollision", "near": "Near", "visible": "Visible"}


class CLIError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    out_dir: Path = Path("runs")
    seed: int = 0
    synth: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    bands: dict = field(default_factory=dict)  # NearCollision/Near/Visible -> metres
    scenario: dict = field(default_factory=dict)
    playback: dict = field(default_factory=dict)
    policies: dict = field(default_factory=dict)  # name -> field overrides


def _coerce(value: str, like):
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise CLIError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, list):
        return [int(v) for v in value.replace(",", " ").split()]
    if isinstance(like, dict):
        return {k.strip(): float(v) for k, v in (p.split(":") for p in value.split(",") if p.strip())}
    return value


def load_config(path: str | None) -> RunConfig:
    """Flat INI with sections [run], [synth], [model], [scenario], [bands],
    [playback] and [policy.<name>]; unknown sections and keys are errors."""
    from scenegen.ingest import SynthConfig
    from scenegen.model import ModelConfig
    from scenegen.playback import POLICIES, EgoPolicy

    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise CLIError(f"cannot read config {path}: {exc}") from None

    defaults = {
        "synth": {f.name: getattr(SynthConfig(), f.name) for f in fields(SynthConfig) if f.name != "rng_seed"},
        "model": {f.name: getattr(ModelConfig(), f.name) for f in fields(ModelConfig) if f.name != "rng_seed"},
        "scenario": {"tau_seconds": 2.083, "ego_speed": 8.0, "horizon": 15.0},
        "playback": {"dt": 0.05, "horizon": 15.0, "jitter": 0.0},
        "bands": {k: 0.0 for k in BAND_KEYS},
        "run": {"out_dir": "", "seed": 0},
    }
    policy_fields = {f.name: 0.0 for f in fields(EgoPolicy) if f.name != "name"}
    for section in parser.sections():
        if section.startswith("policy."):
            name = section.split(".", 1)[1]
            if name not in POLICIES:
                raise CLIError(f"config: unknown policy section [{section}]")
            allowed = policy_fields
        elif section in defaults:
            allowed = defaults[section]
        else:
            raise CLIError(f"config: unknown section [{section}]")
        values = {}
        for key, raw in parser.items(section):
            if key not in allowed:
                raise CLIError(f"config: unknown key {key!r} in [{section}]")
            try:
                values[key] = _coerce(raw, allowed[key])
            except ValueError as exc:
                raise CLIError(f"config: bad value for {section}.{key}: {exc}") from None
        if section.startswith("policy."):
            cfg.policies[section.split(".", 1)[1]] = values
        elif section == "run":
            if values.get("out_dir"):
                cfg.out_dir = Path(values["out_dir"])
            cfg.seed = int(values.get("seed", cfg.seed))
        elif section == "bands":
            cfg.bands = {BAND_KEYS[k]: v for k, v in values.items()}
        else:
            getattr(cfg, section).update(values)
    return cfg


def resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_dir is not None:
        cfg.out_dir = Path(args.out_dir)
    return cfg


# --------------------------------------------------------------------------
# helpers


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CLIError(f"{path}: invalid JSON ({exc})") from None


def _bands(cfg: RunConfig):
    from scenegen.ontology import Relation
    from scenegen.scenario import DEFAULT_BANDS

    out = dict(DEFAULT_BANDS)
    for k, v in cfg.bands.items():
        out[Relation.parse(k)] = v
    return out


def _model_config(cfg: RunConfig, **overrides):
    from scenegen.model import ModelConfig

    doc = {**cfg.model, "rng_seed": cfg.seed}
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return ModelConfig.from_json(doc)


def _write_dataset(out: Path, graphs, seed: int) -> dict:
    """graphs.jsonl, split.json and the seed database built from the train split."""
    from scenegen.graph import SeedDatabase, prune_to_seed, write_jsonl
    from scenegen.ingest import split_dataset

    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(graphs, out / "graphs.jsonl")
    split = split_dataset(list(range(len(graphs))), seed, key=lambda i: graphs[i].av_action)
    manifest = {"seed": seed, "n": len(graphs), "train": sorted(split.train),
                "val": sorted(split.val), "test": sorted(split.test)}
    _write_json(out / "split.json", manifest)
    db = SeedDatabase()
    for i in manifest["train"]:
        db.insert(prune_to_seed(graphs[i], keep_conditioning=False))
    db.save(out / "seed_db")
    return manifest


def _load_dataset(data_dir: Path):
    from scenegen.graph import read_jsonl

    gpath, spath = data_dir / "graphs.jsonl", data_dir / "split.json"
    if not gpath.exists() or not spath.exists():
        raise CLIError(f"no dataset in {data_dir} (expected graphs.jsonl and split.json; run synth first)")
    return read_jsonl(gpath), _read_json(spath)


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg: RunConfig) -> int:
    from scenegen.graph import scenario_from_annotations
    from scenegen.ingest import SynthConfig, annotations_to_json, generate_synthetic

    doc = {**cfg.synth, "rng_seed": cfg.seed}
    if args.n is not None:
        doc["n_scenarios"] = args.n
    if args.noise is not None:
        doc["noise"] = args.noise
    try:
        sc = SynthConfig(**doc)
    except (TypeError, ValueError) as exc:
        raise CLIError(f"synth config: {exc}") from None
    scenarios = generate_synthetic(sc)
    ann = cfg.out_dir / "annotations"
    ann.mkdir(parents=True, exist_ok=True)
    for i, frames in enumerate(scenarios):
        _write_json(ann / f"scenario_{i:05d}.json", annotations_to_json(frames, f"synthetic_{i:05d}"))
    graphs = [scenario_from_annotations(f) for f in scenarios]
    m = _write_dataset(cfg.out_dir, graphs, cfg.seed)
    print(f"synth: {len(graphs)} scenarios -> {cfg.out_dir} "
          f"(train {len(m['train'])}, val {len(m['val'])}, test {len(m['test'])})")
    return 0


def _annotation_windows(paths):
    from scenegen.ingest import AnnotationError, parse_annotations

    out = []
    for p in paths:
        try:
            with open(p, encoding="utf-8") as fh:
                frames = parse_annotations(fh)
        except OSError as exc:
            raise CLIError(f"cannot read {p}: {exc.strerror}") from None
        except AnnotationError as exc:
            raise CLIError(f"{p}: {exc}") from None
        out.append((Path(p).stem, frames))
    return out


def cmd_ingest(args, cfg: RunConfig) -> int:
    """Raw annotation videos -> downsampled 5-frame windows -> dataset."""
    from scenegen.graph import GraphError, scenario_from_annotations
    from scenegen.ingest import annotations_to_json, window_scenarios

    ann = cfg.out_dir / "annotations"
    ann.mkdir(parents=True, exist_ok=True)
    graphs = []
    for stem, frames in _annotation_windows(args.inputs):
        for k, w in enumerate(window_scenarios(frames, stride_downsample=args.downsample)):
            try:
                graphs.append(scenario_from_annotations(w))
            except GraphError as exc:
                log.warning("%s window %d skipped: %s", stem, k, exc)
                continue
            _write_json(ann / f"scenario_{len(graphs) - 1:05d}.json", annotations_to_json(w, stem))
    m = _write_dataset(cfg.out_dir, graphs, cfg.seed)
    print(f"ingest: {len(graphs)} windows from {len(args.inputs)} files -> {cfg.out_dir} "
          f"(train {len(m['train'])}, val {len(m['val'])}, test {len(m['test'])})")
    return 0


def cmd_build_graphs(args, cfg: RunConfig) -> int:
    """Rebuild graphs, split and seed database from a directory of 5-frame windows."""
    from scenegen.graph import scenario_from_annotations

    src = Path(args.annotations) if args.annotations else cfg.out_dir / "annotations"
    if not src.is_dir():
        raise CLIError(f"annotation directory {src} does not exist")
    files = sorted(src.glob("*.json"))
    graphs = []
    for _, frames in _annotation_windows(files):
        if len(frames) != 5:
            raise CLIError(f"{src}: every file must hold exactly one 5-frame window")
        graphs.append(scenario_from_annotations(frames))
    m = _write_dataset(cfg.out_dir, graphs, cfg.seed)
    print(f"build-graphs: {len(graphs)} graphs, seed database of {len(m['train'])} entries")
    return 0


def _history_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_f1"])
    for r in history:
        w.writerow([r["epoch"], f"{r['train_loss']:.8f}", f"{r['val_f1']:.6f}"])
    return buf.getvalue()


def cmd_train(args, cfg: RunConfig) -> int:
    import numpy as np

    from scenegen.model import evaluate_classification, init_params, make_sample, save_model, train

    data_dir = Path(args.data) if args.data else cfg.out_dir
    graphs, split = _load_dataset(data_dir)
    mcfg = _model_config(cfg, epochs=args.epochs, variant=args.variant, batch_size=args.batch_size)
    samples = [make_sample(g, mcfg) for g in graphs]
    tr = [samples[i] for i in split["train"]]
    va = [samples[i] for i in split["val"]]
    if not tr:
        raise CLIError(f"training split in {data_dir} is empty")

    if args.kfold:
        k = args.kfold
        pool = tr + va
        if len(pool) < k:
            raise CLIError(f"--kfold {k} needs at least {k} train+val scenarios")
        order = np.random.default_rng([cfg.seed, 2]).permutation(len(pool))
        folds = np.array_split(order, k)
        report = []
        for f, held in enumerate(folds):
            held_set = set(held.tolist())
            res = train(mcfg, [pool[i] for i in order if i not in held_set])
            m = evaluate_classification(res.params, mcfg, [pool[i] for i in held])
            report.append({"fold": f, **m.to_json()})
            print(f"fold {f}: F1 {m.f1:.4f} precision {m.precision:.4f} recall {m.recall:.4f}")
        mean = {key: float(np.mean([r[key] for r in report])) for key in ("f1", "accuracy", "precision", "recall")}
        _write_json(cfg.out_dir / "kfold.json", {"k": k, "folds": report, "mean": mean})

    if mcfg.epochs == 0:
        store, history, best = init_params(mcfg), [], 0
        state = None
    else:
        res = train(mcfg, tr, va, progress=lambda r: log.info(
            "epoch %d loss %.5f val_f1 %.4f", r["epoch"], r["train_loss"], r["val_f1"]))
        store, history, best, state = res.params, res.history, res.best_epoch, res.optimizer
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    save_model(cfg.out_dir / "checkpoint.json", store, mcfg, state)
    (cfg.out_dir / "history.csv").write_text(_history_csv(history), encoding="utf-8")
    train_m = evaluate_classification(store, mcfg, tr)
    print(f"train: variant {mcfg.variant}, {mcfg.epochs} epochs, best epoch {best}, "
          f"train F1 {train_m.f1:.4f} -> {cfg.out_dir / 'checkpoint.json'}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    from scenegen.evaluation import metrics_table, statement_scores
    from scenegen.graph import prune_to_seed
    from scenegen.model import evaluate_classification, load_model, make_sample, predict

    store, mcfg = load_model(args.checkpoint)
    graphs, split = _load_dataset(Path(args.data) if args.data else cfg.out_dir)
    chosen = [graphs[i] for i in split[args.subset]]
    if not chosen:
        raise CLIError(f"the {args.subset} split is empty")
    m = evaluate_classification(store, mcfg, [make_sample(g, mcfg) for g in chosen])
    fc = sem = 0.0
    for g in chosen:
        s = statement_scores(predict(store, prune_to_seed(g, keep_conditioning=True), mcfg), g)
        fc += s["factual_correctness"]
        sem += s["semantic_similarity"]
    report = {**m.to_json(), "subset": args.subset, "n_graphs": len(chosen),
              "factual_correctness": fc / len(chosen), "semantic_similarity": sem / len(chosen)}
    _write_json(cfg.out_dir / "metrics.json", report)
    print(metrics_table({mcfg.variant: m}), end="")
    print(f"factual correctness {report['factual_correctness']:.4f}, "
          f"semantic similarity {report['semantic_similarity']:.4f}")
    return 0


def _requests(args, db, seed: int):
    from scenegen.scenario import ScenarioError, ScenarioRequest, agent_pool_from, evenly_distributed_requests

    if args.even:
        return evenly_distributed_requests(args.even, agent_pool_from(db.entries), seed)
    doc = _read_json(Path(args.request))
    docs = doc if isinstance(doc, list) else [doc]
    try:
        return [ScenarioRequest.from_json(d) for d in docs]
    except (ScenarioError, ValueError) as exc:
        raise CLIError(f"{args.request}: {exc}") from None


def cmd_generate(args, cfg: RunConfig) -> int:
    from scenegen.graph import SeedDatabase, dumps_graph
    from scenegen.model import load_model
    from scenegen.scenario import emit_openscenario, graph_to_script, handle_request, mirror

    if not args.request and not args.even:
        raise CLIError("generate needs --request FILE or --even N")
    store, mcfg = load_model(args.checkpoint)
    db_dir = Path(args.db) if args.db else cfg.out_dir / "seed_db"
    if not (db_dir / "index.json").exists():
        raise CLIError(f"no seed database at {db_dir}")
    db = SeedDatabase.load(db_dir)
    out = cfg.out_dir / "generated"
    out.mkdir(parents=True, exist_ok=True)
    requests = _requests(args, db, cfg.seed)
    sc = cfg.scenario
    for i, req in enumerate(requests):
        g = handle_request(req, db, store, mcfg)
        script = graph_to_script(g, _bands(cfg), ego_speed=sc.get("ego_speed", 8.0),
                                 tau_seconds=sc.get("tau_seconds", 2.083), horizon=sc.get("horizon", 15.0))
        if args.mirror:
            script = mirror(script)
        stem = out / f"request_{i:03d}"
        Path(f"{stem}.graph.jsonl").write_text(dumps_graph(g) + "\n", encoding="utf-8")
        _write_json(Path(f"{stem}.request.json"), req.to_json())
        _write_json(Path(f"{stem}.script.json"), script.to_json())
        Path(f"{stem}.xosc").write_text(emit_openscenario(script, sc.get("horizon", 15.0)), encoding="utf-8")
        print(f"generate: {'+'.join(a.value for a in req.agents)} / {req.av_action.value} / "
              f"{req.criticality.value} -> {stem}.xosc")
    return 0


def _load_scripts(paths):
    from scenegen.scenario import ScenarioError, ScenarioScript

    out = []
    for p in paths:
        try:
            out.append((Path(p), ScenarioScript.from_json(_read_json(Path(p)))))
        except ScenarioError as exc:
            raise CLIError(f"{p}: {exc}") from None
    return out


def cmd_emit(args, cfg: RunConfig) -> int:
    from scenegen.graph import read_jsonl
    from scenegen.scenario import emit_openscenario, graph_to_script, mirror, validate_openscenario

    items = []
    for p in args.inputs:
        if str(p).endswith(".jsonl"):
            items.extend((Path(p), graph_to_script(g, _bands(cfg))) for g in read_jsonl(p))
        else:
            items.extend(_load_scripts([p]))
    bad = 0
    for k, (path, script) in enumerate(items):
        if args.mirror:
            script = mirror(script)
        xml = emit_openscenario(script, cfg.scenario.get("horizon", 15.0))
        stem = path.name.split(".")[0] + (f"_{k:03d}" if len(items) > len(args.inputs) else "")
        dest = cfg.out_dir / "xosc" / f"{stem}.xosc"
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_text(xml, encoding="utf-8")
        errors = validate_openscenario(xml)
        if errors:
            bad += 1
            print(f"emit: {dest} INVALID: {errors[0]}")
        else:
            print(f"emit: {dest}")
    return 1 if bad else 0


def cmd_play(args, cfg: RunConfig) -> int:
    from scenegen.evaluation import scr_table
    from scenegen.playback import batch_consistency, get_policy, head_on_family, oracle_suite, run

    if args.oracle:
        scripts = [(Path(f"oracle_{i:02d}"), s) for i, s in enumerate(oracle_suite())]
    elif args.head_on:
        scripts = [(Path(f"head_on_{i:02d}"), s) for i, s in enumerate(head_on_family())]
    else:
        if not args.scripts:
            raise CLIError("play needs script files, --oracle or --head-on")
        scripts = _load_scripts(args.scripts)
    pb = cfg.playback
    kw = {"dt": pb.get("dt", 0.05), "horizon": pb.get("horizon", 15.0), "rng_seed": cfg.seed,
          "jitter": pb.get("jitter", 0.0)}
    reports, per_run = {}, []
    for name in args.policy:
        policy = get_policy(name, cfg.policies.get(name))
        # a generated script carries the requested criticality
        requested = [(s, s.criticality) for _, s in scripts]
        rep, results = batch_consistency(requested, policy, **kw)
        reports[name] = rep
        for (path, s), (_, crit), r in zip(scripts, requested, results):
            per_run.append({"policy": name, "script": path.name, "requested": crit.value, **r.to_json()})
        if args.trajectories:
            tdir = cfg.out_dir / "trajectories" / name
            tdir.mkdir(parents=True, exist_ok=True)
            for path, s in scripts:
                (tdir / f"{path.name.split('.')[0]}.csv").write_text(run(s, policy, **kw).trajectory_csv(),
                                                                     encoding="utf-8")
    _write_json(cfg.out_dir / "scr.json", {"policies": {k: v.to_json() for k, v in reports.items()},
                                           "runs": per_run})
    print(scr_table(reports), end="")
    return 0


def cmd_metrics(args, cfg: RunConfig) -> int:
    from scenegen.evaluation import format_table, statement_scores
    from scenegen.graph import read_jsonl

    pred, gold = read_jsonl(args.pred), read_jsonl(args.gold)
    if len(pred) != len(gold):
        raise CLIError(f"{len(pred)} predicted graphs vs {len(gold)} reference graphs")
    if not pred:
        raise CLIError("no graphs to score")
    rows = [statement_scores(p, g) for p, g in zip(pred, gold)]
    mean = {k: sum(r[k] for r in rows) / len(rows) for k in rows[0]}
    _write_json(cfg.out_dir / "statement_metrics.json", {"per_graph": rows, "mean": mean})
    print(format_table(["metric", "mean"], [[k, v] for k, v in mean.items()]), end="")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scenegen", description=__doc__)
    p.add_argument("--config", help="INI file; flags override it")
    p.add_argument("--seed", type=int, help="global RNG seed (default 0)")
    p.add_argument("--out-dir", help="output directory (default runs)")
    p.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread cap")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic annotated corpus")
    s.add_argument("--n", type=int)
    s.add_argument("--noise", type=float)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("ingest", help="window raw annotation files into a dataset")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--downsample", type=int, default=5)
    s.set_defaults(fn=cmd_ingest)

    s = sub.add_parser("build-graphs", help="rebuild graphs, split and seed database")
    s.add_argument("--annotations")
    s.set_defaults(fn=cmd_build_graphs)

    s = sub.add_parser("train", help="train the link predictor")
    s.add_argument("--data")
    s.add_argument("--epochs", type=int)
    s.add_argument("--variant")
    s.add_argument("--batch-size", type=int)
    s.add_argument("--kfold", type=int, default=0)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="classification and statement metrics")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data")
    s.add_argument("--subset", choices=("train", "val", "test"), default="test")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("generate", help="serve scenario requests")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--request")
    s.add_argument("--even", type=int, help="N requests with evenly distributed criticality")
    s.add_argument("--db")
    s.add_argument("--mirror", action="store_true")
    s.set_defaults(fn=cmd_generate)

    s = sub.add_parser("emit", help="scripts or graphs -> OpenSCENARIO files")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--mirror", action="store_true")
    s.set_defaults(fn=cmd_emit)

    s = sub.add_parser("play", help="run scripts and report the scenario consistency rate")
    s.add_argument("scripts", nargs="*")
    s.add_argument("--policy", action="append", choices=("normal", "cautious", "aggressive"))
    s.add_argument("--oracle", action="store_true")
    s.add_argument("--head-on", action="store_true")
    s.add_argument("--trajectories", action="store_true")
    s.set_defaults(fn=cmd_play)

    s = sub.add_parser("metrics", help="statement metrics between two graph files")
    s.add_argument("--pred", required=True)
    s.add_argument("--gold", required=True)
    s.set_defaults(fn=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if getattr(args, "policy", None) is None and args.command == "play":
        args.policy = ["normal"]
    try:
        cfg = resolve(args)
        return args.fn(args, cfg)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
