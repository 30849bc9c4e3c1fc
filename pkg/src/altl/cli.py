"""Command-line entry points: synth, run, select, cluster, eval, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import acquisition as acq
from . import model as mdl
from .clustering import APConfig, affinity_propagation, centroids
from .data import SynthConfig, load_dataset, save_dataset, save_vocabulary, synth_generate
from .engine import (
    experiment_config_from_dict,
    run_experiment,
    write_results,
)
from .metrics import f1, lrap


def _load_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _read_feature_file(path: str) -> tuple[list[str], np.ndarray]:
    ids, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                ids.append(rec["id"])
                rows.append(rec.get("features", rec.get("scores")))
            except KeyError as e:
                raise SystemExit(f"{path}:{lineno}: missing field {e}")
    if not ids:
        raise SystemExit(f"{path}: empty feature file")
    return ids, np.asarray(rows, dtype=np.float64)


def cmd_synth(args) -> int:
    cfg = SynthConfig(**_load_json(args.config)) if args.config else SynthConfig()
    dataset = synth_generate(cfg)
    save_dataset(dataset, args.output, strip_labels=args.strip_labels)
    if args.vocab:
        save_vocabulary(dataset.vocab, args.vocab)
    print(f"wrote {len(dataset.examples)} examples to {args.output}")
    return 0


def cmd_run(args) -> int:
    cfg = experiment_config_from_dict(_load_json(args.config) if args.config else {})
    result = run_experiment(cfg)
    write_results(result, args.output)
    last = result.aggregate[-1]
    print(
        f"strategy={cfg.acquisition.strategy} lambda={cfg.acquisition.lam} "
        f"runs={cfg.runs} final LRAP {last['lrap_mean']:.4f} "
        f"(sd {last['lrap_sd']:.4f}) -> {args.output}"
    )
    return 0


def cmd_select(args) -> int:
    raw = _load_json(args.config) if args.config else {}
    if "lambda" in raw:
        raw["lam"] = raw.pop("lambda")
    cfg = acq.AcquisitionConfig(**raw)
    pool = _load_json(args.pool)
    labeled_ids, unlabeled_ids = pool["labeled"], pool["unlabeled"]

    if cfg.strategy == "random":
        picked = acq.select_batch_random(unlabeled_ids, cfg)
    elif cfg.strategy == "maxentropy":
        if not args.scores:
            raise SystemExit("maxentropy needs --scores")
        ids, mat = _read_feature_file(args.scores)
        by_id = {i: mat[k] for k, i in enumerate(ids)}
        picked = acq.select_batch_maxentropy(
            unlabeled_ids, [by_id[i] for i in unlabeled_ids], cfg
        )
    else:
        if not args.features:
            raise SystemExit(f"{cfg.strategy} needs --features")
        ids, mat = _read_feature_file(args.features)
        index = {i: k for k, i in enumerate(ids)}
        lab = mat[[index[i] for i in labeled_ids]]
        unl = mat[[index[i] for i in unlabeled_ids]]
        if cfg.strategy == "coreset":
            picked = acq.select_batch_coreset(lab, unlabeled_ids, unl, cfg)
        else:
            ap_cfg = APConfig(**_load_json(args.ap_config)) if args.ap_config else APConfig()
            all_feats = np.concatenate([lab, unl])
            cluster = affinity_propagation(all_feats, ap_cfg)
            cents = centroids(cluster, all_feats)
            picked = acq.select_batch_altl(lab, unlabeled_ids, unl, cents, cfg)
    for ex_id in picked:
        print(ex_id)
    return 0


def cmd_cluster(args) -> int:
    ids, mat = _read_feature_file(args.features)
    cfg = APConfig(**_load_json(args.config)) if args.config else APConfig()
    result = affinity_propagation(mat, cfg)
    record = result.to_record()
    record["ids"] = ids
    out = json.dumps(record)
    if args.output:
        Path(args.output).write_text(out + "\n", encoding="utf-8")
    else:
        print(out)
    return 0


def cmd_eval(args) -> int:
    dataset = load_dataset(args.dataset)
    ids, mat = _read_feature_file(args.scores)
    index = {i: k for k, i in enumerate(ids)}
    true_sets, rows = [], []
    for ex in dataset.examples:
        if ex.labels is None or ex.id not in index:
            continue
        true_sets.append(ex.labels)
        rows.append(mat[index[ex.id]])
    if not true_sets:
        raise SystemExit("no labeled examples with scores to evaluate")
    preds = [mdl.predict_labels(r, margin=args.margin) for r in rows]
    out = {
        "n": len(true_sets),
        "lrap": lrap(true_sets, rows),
        "f1_micro": f1(true_sets, preds, "micro"),
        "f1_macro": f1(true_sets, preds, "macro"),
    }
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.sessions_dir)
    if args.dataset:
        app.state.default_dataset = str(args.dataset)

        @app.get("/v1/default-dataset")
        def default_dataset():
            return {"dataset": str(args.dataset)}

    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="altl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic long-tailed dataset")
    p.add_argument("--config", help="SynthConfig JSON file")
    p.add_argument("-o", "--output", required=True, help="dataset file to write")
    p.add_argument("--vocab", help="also write the vocabulary here")
    p.add_argument("--strip-labels", action="store_true", help="omit labels from the file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="run an active-learning experiment")
    p.add_argument("--config", help="ExperimentConfig JSON file")
    p.add_argument("-o", "--output", required=True, help="results directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("select", help="select a batch from a feature/pool file")
    p.add_argument("--features", help="JSONL {id, features}")
    p.add_argument("--scores", help="JSONL {id, scores} (maxentropy)")
    p.add_argument("--pool", required=True, help="JSON {labeled: [...], unlabeled: [...]}")
    p.add_argument("--config", help="AcquisitionConfig JSON")
    p.add_argument("--ap-config", help="APConfig JSON for the clustering step")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("cluster", help="affinity propagation over a feature file")
    p.add_argument("--features", required=True, help="JSONL {id, features}")
    p.add_argument("--config", help="APConfig JSON")
    p.add_argument("-o", "--output", help="write the cluster record here")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval", help="metrics for a scores file against a labeled dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scores", required=True, help="JSONL {id, scores}")
    p.add_argument("--margin", type=float, default=0.2)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="start the labeling service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--dataset", help="advertised default dataset path")
    p.add_argument("--sessions-dir", default="sessions")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
