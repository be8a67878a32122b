"""Cross-validated training runs over a dataset, plus run-directory I/O.

A CvContext precomputes tokenized documents, normalized images, and fold
splits for one dataset. Each fold builds its corpus graph from the
fold's training documents only; validation and test documents get their
adjacency blocks synthesized against the training statistics. Fusion
models load the fold checkpoints of their members, freeze them, and
train only the fusion heads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from .autodiff import Tensor
from .dataio import MODEL_MEMBERS, RunConfig
from .ensemble import FoldRun, derive_taskA_labels, derive_taskA_probs, \
    kfold_split, taskA_macro_f1, weighted_f1
from .fusion import FusionModel
from .nn import AttentionConfig, GcanEncoder, ImageEncoder, ModelOutput, \
    TextEncoder
from .preprocess import RawSample, clean_text, combine_texts, \
    encode_document, build_vocabulary, normalize_image, tokenize
from .textgraph import build_adjacency, count_windows, \
    extract_document_adjacency, extract_unseen_adjacency
from .training import EpochRecord, TrainConfig, train_model

EVAL_BATCH = 64


class DependencyError(RuntimeError):
    """A fusion model was requested before its members were trained."""


def document_tokens(sample: RawSample) -> list[str]:
    ocr = clean_text(sample.ocr_text)
    captions = [clean_text(c) for c in sample.captions]
    return tokenize(combine_texts(ocr, [c for c in captions if c]))


@dataclass
class EncodedSplit:
    ids: list[str]
    seqs: np.ndarray            # (N, L_S) token ids
    adjs: np.ndarray | None     # (N, L_S, L_S)
    images: np.ndarray          # (N, 3, C, C)
    y_mis: np.ndarray
    y_sub: np.ndarray


@dataclass
class FoldData:
    train: EncodedSplit
    val: EncodedSplit
    test: EncodedSplit
    vocab_size: int


class CvContext:
    """Shared per-dataset state: tokens, images, labels, fold splits."""

    def __init__(self, train_samples: list[RawSample],
                 test_samples: list[RawSample], cfg: RunConfig):
        self.cfg = cfg
        self.train_samples = train_samples
        self.test_samples = test_samples
        self.train_tokens = [document_tokens(s) for s in train_samples]
        self.test_tokens = [document_tokens(s) for s in test_samples]
        self.train_images = np.stack([
            normalize_image(s.image, cfg.resize, cfg.crop)
            for s in train_samples])
        self.test_images = np.stack([
            normalize_image(s.image, cfg.resize, cfg.crop)
            for s in test_samples])
        self.train_y_mis = np.array([s.labels.mis for s in train_samples],
                                    dtype=float)
        self.train_y_sub = np.stack([s.labels.sub_labels()
                                     for s in train_samples])
        self.test_y_mis = np.array([s.labels.mis for s in test_samples],
                                   dtype=float)
        self.test_y_sub = np.stack([s.labels.sub_labels()
                                    for s in test_samples])
        self.folds = kfold_split(len(train_samples), cfg.folds, cfg.seed)
        self._cache: dict[int, FoldData] = {}

    def fold_data(self, fold: int) -> FoldData:
        if fold not in self._cache:
            self._cache[fold] = self._build_fold(fold)
        return self._cache[fold]

    def _build_fold(self, fold: int) -> FoldData:
        cfg = self.cfg
        val_idx = self.folds[fold]
        mask = np.ones(len(self.train_samples), dtype=bool)
        mask[val_idx] = False
        train_idx = np.flatnonzero(mask)

        corpus_tokens = [self.train_tokens[i] for i in train_idx]
        vocab = build_vocabulary(corpus_tokens, cfg.min_freq, cfg.max_vocab)
        id_corpus = [[vocab.lookup(t) for t in doc] for doc in corpus_tokens]
        stats = count_windows(id_corpus, cfg.window_len)
        graph = build_adjacency(id_corpus, stats, vocab)

        def encode_split(indices, tokens_all, images_all, y_mis, y_sub,
                         ids_all, in_graph):
            seqs, adjs = [], []
            for local, i in enumerate(indices):
                seq = encode_document(tokens_all[i], vocab, cfg.seq_len)
                seqs.append(seq.ids)
                if in_graph:
                    adj = extract_document_adjacency(graph, local, seq)
                else:
                    doc_ids = [vocab.lookup(t) for t in tokens_all[i]]
                    adj = extract_unseen_adjacency(graph, doc_ids, seq)
                adjs.append(adj.matrix)
            return EncodedSplit(
                ids=[ids_all[i] for i in indices],
                seqs=np.stack(seqs), adjs=np.stack(adjs),
                images=images_all[indices],
                y_mis=y_mis[indices], y_sub=y_sub[indices])

        train_ids_all = [s.id for s in self.train_samples]
        test_ids_all = [s.id for s in self.test_samples]
        train = encode_split(train_idx, self.train_tokens, self.train_images,
                             self.train_y_mis, self.train_y_sub,
                             train_ids_all, in_graph=True)
        val = encode_split(val_idx, self.train_tokens, self.train_images,
                           self.train_y_mis, self.train_y_sub,
                           train_ids_all, in_graph=False)
        test = encode_split(np.arange(len(self.test_samples)),
                            self.test_tokens, self.test_images,
                            self.test_y_mis, self.test_y_sub,
                            test_ids_all, in_graph=False)
        return FoldData(train=train, val=val, test=test,
                        vocab_size=len(vocab.id_to_token))


def _attention_config(cfg: RunConfig) -> AttentionConfig:
    return AttentionConfig(d_att=cfg.d_att, n_heads=cfg.n_heads,
                           n_layers=cfg.n_layers, dropout=cfg.dropout)


def make_unimodal(kind: str, cfg: RunConfig, vocab_size: int, n_classes: int,
                  seed: int):
    att = _attention_config(cfg)
    if kind == "bertc":
        return TextEncoder(vocab_size, cfg.seq_len, n_classes, att, seed)
    if kind == "gcan":
        return GcanEncoder(vocab_size, cfg.seq_len, n_classes, att, seed)
    if kind == "vit":
        return ImageEncoder(cfg.crop, cfg.patch, n_classes, att, seed)
    raise ValueError(f"unknown uni-modal model {kind!r}")


class UnimodalTrainable:
    """Adapts an encoder and a fold's splits to the training loop."""

    def __init__(self, model, data: FoldData):
        self.model = model
        self.data = data
        self.params = model.params

    def _forward(self, split: EncodedSplit, idx, rng) -> ModelOutput:
        kind = self.model.kind
        if kind == "text":
            return self.model.forward(split.seqs[idx], rng=rng)
        if kind == "gcan":
            return self.model.forward(split.seqs[idx], split.adjs[idx],
                                      rng=rng)
        return self.model.forward(split.images[idx], rng=rng)

    def forward_batch(self, idx, rng) -> ModelOutput:
        return self._forward(self.data.train, idx, rng)

    def eval_split(self, split: EncodedSplit) -> tuple[np.ndarray, np.ndarray]:
        """Eval-mode probabilities and features, batched."""
        n = len(split.ids)
        probs, feats = [], []
        for start in range(0, n, EVAL_BATCH):
            idx = np.arange(start, min(start + EVAL_BATCH, n))
            out = self._forward(split, idx, None)
            probs.append(out.p.data)
            feats.append(out.f.data)
        return np.concatenate(probs), np.concatenate(feats)

    def eval_val(self) -> np.ndarray:
        return self.eval_split(self.data.val)[0]


class FusionTrainable:
    """Trains the fusion heads over cached frozen member outputs."""

    def __init__(self, model: FusionModel, member_train, member_val):
        self.model = model
        self.params = model.params
        self.member_train = member_train  # list of (p, f) arrays
        self.member_val = member_val

    def _outputs(self, cached, idx) -> list[ModelOutput]:
        return [ModelOutput(p=Tensor(p[idx]), f=Tensor(f[idx]))
                for p, f in cached]

    def forward_batch(self, idx, rng) -> ModelOutput:
        return self.model.forward(self._outputs(self.member_train, idx), rng)

    def eval_cached(self, cached) -> np.ndarray:
        n = len(cached[0][0])
        probs = []
        for start in range(0, n, EVAL_BATCH):
            idx = np.arange(start, min(start + EVAL_BATCH, n))
            probs.append(self.model.forward(self._outputs(cached, idx)).p.data)
        return np.concatenate(probs)

    def eval_val(self) -> np.ndarray:
        return self.eval_cached(self.member_val)


def _train_config(cfg: RunConfig, fold: int, fusion: bool) -> TrainConfig:
    return TrainConfig(
        setup=cfg.setup, epochs=cfg.epochs,
        batch_size=cfg.fusion_batch_size if fusion else cfg.batch_size,
        base_lr=cfg.fusion_lr if fusion else cfg.base_lr,
        warmup_epochs=cfg.warmup_epochs, dropout=cfg.dropout,
        patience=cfg.patience, mix=(cfg.loss_mix_l1, cfg.loss_mix_l2),
        seed=cfg.seed + fold)


@dataclass
class FoldArtifacts:
    run: FoldRun
    records: list[EpochRecord]
    params: dict[str, np.ndarray]
    meta: dict[str, str]
    test_taskA_f1: float
    test_weighted_f1: float | None


def _test_scores(probs: np.ndarray, y_mis, y_sub, setup: str):
    labels = (probs >= 0.5).astype(int)
    if setup == "A":
        return taskA_macro_f1(labels[:, 0], y_mis), None
    task_a = taskA_macro_f1(derive_taskA_labels(labels), y_mis)
    return task_a, weighted_f1(labels, y_sub)


def train_fold(ctx: CvContext, model_name: str, fold: int,
               out_root: str | None = None) -> FoldArtifacts:
    """Train one model on one fold; fusion members are read from out_root."""
    cfg = ctx.cfg
    data = ctx.fold_data(fold)
    n_classes = 1 if cfg.setup == "A" else 4
    members = MODEL_MEMBERS[model_name]
    tconf = _train_config(cfg, fold, fusion=members is not None)
    meta = {"model": model_name, "fold": str(fold), "setup": cfg.setup}

    if members is None:
        model = make_unimodal(model_name, cfg, data.vocab_size, n_classes,
                              seed=tconf.seed)
        trainable = UnimodalTrainable(model, data)
        best_f1, params, records = train_model(
            trainable, data.train.y_mis, data.train.y_sub,
            data.val.y_mis, data.val.y_sub, tconf)
        test_probs = trainable.eval_split(data.test)[0]
    else:
        if out_root is None:
            raise DependencyError("fusion training needs a run directory "
                                  "with trained member models")
        caches = {"train": [], "val": [], "test": []}
        for member in members:
            path = os.path.join(out_root, member, f"fold{fold}.ckpt")
            if not os.path.exists(path):
                raise DependencyError(
                    f"member model {member!r} has no checkpoint for fold "
                    f"{fold}; train it before {model_name!r}")
            member_params, member_meta = ckpt.load_checkpoint(path)
            meta[f"member_hash:{member}"] = ckpt.file_hash(path)
            mmodel = make_unimodal(member, cfg, data.vocab_size, n_classes,
                                   seed=0)
            for name, tensor in mmodel.params.items():
                if tensor.data.shape != member_params[name].shape:
                    raise DependencyError(
                        f"checkpoint {path} does not match the current "
                        f"configuration (parameter {name})")
                tensor.data = member_params[name]
                tensor.requires_grad = False
            mtrain = UnimodalTrainable(mmodel, data)
            caches["train"].append(mtrain.eval_split(data.train))
            caches["val"].append(mtrain.eval_split(data.val))
            caches["test"].append(mtrain.eval_split(data.test))
        fmodel = FusionModel([(n_classes, cfg.d_att)] * len(members),
                             n_classes, cfg.dropout, seed=tconf.seed)
        trainable = FusionTrainable(fmodel, caches["train"], caches["val"])
        best_f1, params, records = train_model(
            trainable, data.train.y_mis, data.train.y_sub,
            data.val.y_mis, data.val.y_sub, tconf)
        test_probs = trainable.eval_cached(caches["test"])

    task_a, weighted = _test_scores(test_probs, data.test.y_mis,
                                    data.test.y_sub, cfg.setup)
    meta["best_val_f1"] = f"{best_f1:.17g}"
    run = FoldRun(model_name=model_name, fold=fold, best_f1=best_f1,
                  test_probs=test_probs)
    return FoldArtifacts(run=run, records=records, params=params, meta=meta,
                         test_taskA_f1=task_a, test_weighted_f1=weighted)


def write_predictions(path: str, ids: list[str], probs: np.ndarray,
                      setup: str) -> None:
    """TSV with per-class probabilities and thresholded labels."""
    labels = (probs >= 0.5).astype(int)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id\tp_shm\tp_ste\tp_obj\tp_vio\tp_mis\t"
                 "label_shm\tlabel_ste\tlabel_obj\tlabel_vio\tlabel_mis\n")
        for i, sid in enumerate(ids):
            if setup == "A":
                sub_p = np.zeros(4)
                sub_l = np.zeros(4, dtype=int)
                p_mis = probs[i, 0]
                l_mis = labels[i, 0]
            else:
                sub_p = probs[i]
                sub_l = labels[i]
                p_mis = derive_taskA_probs(probs[i])
                l_mis = derive_taskA_labels(labels[i])
            cols = [sid] + [f"{v:.17g}" for v in sub_p] + [f"{p_mis:.17g}"] \
                + [str(v) for v in sub_l] + [str(l_mis)]
            fh.write("\t".join(cols) + "\n")


def read_predictions(path: str) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Returns (ids, sub-probabilities (N, 4), labels (N, 5) incl. mis)."""
    ids, probs, labels = [], [], []
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            ids.append(parts[0])
            probs.append([float(v) for v in parts[1:5]])
            labels.append([int(v) for v in parts[6:11]])
    return ids, np.array(probs), np.array(labels, dtype=int)


def train_model_cv(ctx: CvContext, model_name: str, out_root: str,
                   jobs: int = 1, log=print) -> list[FoldArtifacts]:
    """Train all folds of one model and persist the run directory."""
    cfg = ctx.cfg
    model_dir = os.path.join(out_root, model_name)
    os.makedirs(model_dir, exist_ok=True)

    def one(fold: int) -> FoldArtifacts:
        art = train_fold(ctx, model_name, fold, out_root)
        if log is not None:
            log(f"{model_name} fold {fold}: best val F1 "
                f"{art.run.best_f1:.4f}, test task-A F1 "
                f"{art.test_taskA_f1:.4f}")
        return art

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            artifacts = list(pool.map(one, range(cfg.folds)))
    else:
        artifacts = [one(fold) for fold in range(cfg.folds)]

    files = {}
    log_path = os.path.join(model_dir, "train_log.tsv")
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write("fold\tepoch\ttrain_loss\tval_f1\tlr\n")
        for fold, art in enumerate(artifacts):
            for r in art.records:
                fh.write(f"{fold}\t{r.epoch}\t{r.train_loss:.17g}\t"
                         f"{r.val_f1:.17g}\t{r.lr:.17g}\n")
    files["train_log.tsv"] = "log"

    runs_path = os.path.join(model_dir, "runs.tsv")
    with open(runs_path, "w", encoding="utf-8") as fh:
        fh.write("fold\tbest_val_f1\ttest_taskA_f1\ttest_weighted_f1\n")
        for fold, art in enumerate(artifacts):
            weighted = "" if art.test_weighted_f1 is None \
                else f"{art.test_weighted_f1:.17g}"
            fh.write(f"{fold}\t{art.run.best_f1:.17g}\t"
                     f"{art.test_taskA_f1:.17g}\t{weighted}\n")
    files["runs.tsv"] = "scores"

    test_ids = [s.id for s in ctx.test_samples]
    for fold, art in enumerate(artifacts):
        name = f"fold{fold}.ckpt"
        ckpt.save_checkpoint(os.path.join(model_dir, name), art.params,
                             art.meta)
        files[name] = "checkpoint"
        pred_name = f"fold{fold}_preds.tsv"
        write_predictions(os.path.join(model_dir, pred_name), test_ids,
                          art.run.test_probs, cfg.setup)
        files[pred_name] = "predictions"

    with open(os.path.join(model_dir, "manifest.tsv"), "w",
              encoding="utf-8") as fh:
        fh.write("file\trole\tsha256\n")
        for name in sorted(files):
            digest = ckpt.file_hash(os.path.join(model_dir, name))
            fh.write(f"{name}\t{files[name]}\t{digest}\n")
    return artifacts


def load_fold_runs(out_root: str, model_name: str,
                   setup: str = "B") -> list[FoldRun]:
    """Reassemble FoldRuns (validation F1 + test probabilities) from disk."""
    model_dir = os.path.join(out_root, model_name)
    runs_path = os.path.join(model_dir, "runs.tsv")
    if not os.path.exists(runs_path):
        raise DependencyError(f"no trained runs for {model_name!r} under "
                              f"{out_root}")
    runs = []
    with open(runs_path, encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            parts = line.split("\t")
            fold, best = int(parts[0]), float(parts[1])
            pred_path = os.path.join(model_dir, f"fold{fold}_preds.tsv")
            _, probs, labels = read_predictions(pred_path)
            if setup == "A":
                # task-A runs store the single probability in the mis column
                with open(pred_path, encoding="utf-8") as pf:
                    pf.readline()
                    probs = np.array([[float(l.split("\t")[5])]
                                      for l in pf])
            runs.append(FoldRun(model_name=model_name, fold=fold,
                                best_f1=best, test_probs=probs))
    return runs
