"""Command-line entry points wiring the pipeline end to end.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from .dataio import MODEL_MEMBERS, RunConfig, ingest, load_config
from .ensemble import EnsemblePrediction, derive_taskA_labels, f1_scores, \
    hard_vote, mann_whitney_u, significance_stars, soft_vote, taskA_macro_f1, \
    weighted_f1
from .nn import NumericError
from .pipeline import CvContext, DependencyError, load_fold_runs, \
    read_predictions, train_model_cv, write_predictions
from .preprocess import DataError, build_vocabulary
from .synth import SynthSpec, gen_synth
from .textgraph import build_adjacency, count_windows, save_graph
from .pipeline import document_tokens


def _load_synth_spec(path: str | None) -> SynthSpec:
    spec = SynthSpec()
    if path is None:
        return spec
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, value = (p.strip() for p in line.split("=", 1))
            if not hasattr(spec, key):
                raise DataError(f"unknown synth spec key {key!r}")
            current = getattr(spec, key)
            setattr(spec, key, type(current)(value))
    return spec


def cmd_gen_synth(args) -> int:
    spec = _load_synth_spec(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    train_path, test_path = gen_synth(spec, args.out)
    manifest = os.path.join(args.out, "manifest.tsv")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("file\trole\tsha256\n")
        for path, role in ((train_path, "train"), (test_path, "test")):
            fh.write(f"{os.path.basename(path)}\t{role}\t"
                     f"{ckpt.file_hash(path)}\n")
    print(f"wrote {train_path} and {test_path}")
    return 0


def cmd_build_graph(args) -> int:
    samples = ingest(os.path.join(args.data, "train.tsv"),
                     os.path.join(args.data, "images"))
    tokens = [document_tokens(s) for s in samples]
    vocab = build_vocabulary(tokens)
    id_corpus = [[vocab.lookup(t) for t in doc] for doc in tokens]
    stats = count_windows(id_corpus, args.window)
    graph = build_adjacency(id_corpus, stats, vocab)
    save_graph(graph, args.out)
    print(f"graph with {graph.n_D} document and {graph.n_W} word nodes "
          f"written to {args.out}")
    return 0


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    for key in ("model", "setup", "folds", "seed", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if args.data:
        cfg.dataset = os.path.join(args.data, "train.tsv")
        cfg.image_dir = os.path.join(args.data, "images")
    if args.out:
        cfg.out_dir = args.out
    cfg.validate()
    if not cfg.dataset or not cfg.out_dir:
        raise DataError("train needs --data (or dataset in the config) "
                        "and --out")
    return cfg


def cmd_train(args) -> int:
    cfg = _run_config(args)
    train_samples = ingest(cfg.dataset, cfg.image_dir)
    test_samples = ingest(os.path.join(os.path.dirname(cfg.dataset),
                                       "test.tsv"), cfg.image_dir)
    ctx = CvContext(train_samples, test_samples, cfg)
    train_model_cv(ctx, cfg.model, cfg.out_dir, jobs=cfg.jobs)
    return 0


def _test_labels(test_dir: str):
    samples = ingest(os.path.join(test_dir, "test.tsv"),
                     os.path.join(test_dir, "images"))
    y_mis = np.array([s.labels.mis for s in samples])
    y_sub = np.stack([s.labels.sub_labels() for s in samples]).astype(int)
    return [s.id for s in samples], y_mis, y_sub


def cmd_evaluate(args) -> int:
    _, y_mis, y_sub = _test_labels(args.test)
    models = sorted(d for d in os.listdir(args.runs)
                    if os.path.isdir(os.path.join(args.runs, d))
                    and d in MODEL_MEMBERS)
    if not models:
        raise DataError(f"no trained model directories under {args.runs}")
    print("model\tfold\ttaskA_macro_f1\ttaskB_weighted_f1")
    for model in models:
        runs = load_fold_runs(args.runs, model)
        for run in runs:
            labels = (run.test_probs >= 0.5).astype(int)
            if run.test_probs.shape[1] == 1:
                task_a = taskA_macro_f1(labels[:, 0], y_mis)
                task_b = ""
            else:
                task_a = taskA_macro_f1(derive_taskA_labels(labels), y_mis)
                task_b = f"{weighted_f1(labels, y_sub):.4f}"
            print(f"{model}\t{run.fold}\t{task_a:.4f}\t{task_b}")
        vote = soft_vote(runs)
        if vote.labels.shape[1] == 1:
            task_a = taskA_macro_f1(vote.labels[:, 0], y_mis)
            task_b = ""
        else:
            task_a = taskA_macro_f1(derive_taskA_labels(vote.labels), y_mis)
            task_b = f"{weighted_f1(vote.labels, y_sub):.4f}"
        print(f"{model}\tsoft-vote\t{task_a:.4f}\t{task_b}")
    return 0


def _model_dir_runs(model_dir: str):
    root, name = os.path.split(os.path.normpath(model_dir))
    return load_fold_runs(root, name)


def cmd_ensemble(args) -> int:
    ids = None
    if args.mode == "soft":
        if len(args.runs) != 1:
            raise DataError("soft voting takes exactly one model directory")
        runs = _model_dir_runs(args.runs[0])
        prediction = soft_vote(runs)
        probs = prediction.probabilities
    else:
        votes = []
        for model_dir in args.runs:
            vote = soft_vote(_model_dir_runs(model_dir))
            votes.append(vote.labels)
        labels = hard_vote(votes)
        probs = labels.astype(float)  # hard votes are 0/1 "probabilities"
    first_pred = None
    for model_dir in args.runs:
        candidate = os.path.join(model_dir, "fold0_preds.tsv")
        if os.path.exists(candidate):
            first_pred = candidate
            break
    ids = read_predictions(first_pred)[0] if first_pred else \
        [str(i) for i in range(len(probs))]
    setup = "A" if probs.shape[1] == 1 else "B"
    write_predictions(args.out, ids, probs, setup)
    print(f"wrote {args.out}")
    return 0


def _read_f1_column(path: str) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        column = header.index("test_taskA_f1") if "test_taskA_f1" in header \
            else 1
        return np.array([float(line.split("\t")[column]) for line in fh])


def cmd_significance(args) -> int:
    x = _read_f1_column(args.a)
    y = _read_f1_column(args.b)
    u, p = mann_whitney_u(x, y)
    print("U\tp_two_sided\tstars")
    print(f"{u:.17g}\t{p:.17g}\t{significance_stars(p)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memefuse",
        description="bi-modal meme classification pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    p.add_argument("--spec", help="synth spec file (key = value lines)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("build-graph", help="build and save the corpus graph")
    p.add_argument("--data", required=True)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="k-fold training of one model")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--model", choices=sorted(MODEL_MEMBERS))
    p.add_argument("--setup", choices=["A", "B"])
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="per-fold and soft-vote F1 scores")
    p.add_argument("--runs", required=True)
    p.add_argument("--test", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ensemble", help="soft or hard voting predictions")
    p.add_argument("--runs", nargs="+", required=True,
                   help="model run directories")
    p.add_argument("--mode", choices=["soft", "hard"], required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("significance", help="Mann-Whitney U over fold F1s")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_significance)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (DataError, DependencyError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
