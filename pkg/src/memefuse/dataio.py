"""Dataset files, PPM images, and the line-based run configuration format."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

import numpy as np

from .preprocess import DataError, LabelVector, RawSample

TSV_HEADER = ["id", "ocr_text", "captions", "mis", "shm", "ste", "obj", "vio"]

MODEL_MEMBERS: dict[str, list[str] | None] = {
    "bertc": None,
    "gcan": None,
    "vit": None,
    "bertc-vit": ["bertc", "vit"],
    "gcan-vit": ["gcan", "vit"],
    "bertc-gcan": ["bertc", "gcan"],
    "bertc-gcan-vit": ["bertc", "gcan", "vit"],
}


def write_ppm(path: str, image: np.ndarray) -> None:
    """Binary P6, 8 bits per channel."""
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(image.astype(np.uint8).tobytes())


def read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields_ = []
    pos = 0
    while len(fields_) < 4:
        while pos < len(data) and data[pos: pos + 1].isspace():
            pos += 1
        if data[pos: pos + 1] == b"#":
            while pos < len(data) and data[pos: pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos: pos + 1].isspace():
            pos += 1
        fields_.append(data[start:pos])
    if fields_[0] != b"P6" or fields_[3] != b"255":
        raise DataError(f"unsupported PPM header in {path}")
    w, h = int(fields_[1]), int(fields_[2])
    pos += 1  # single whitespace byte after maxval
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return raster.reshape(h, w, 3).copy()


def write_dataset(path: str, samples: list[RawSample], image_dir: str) -> None:
    os.makedirs(image_dir, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(TSV_HEADER) + "\n")
        for s in samples:
            captions = "|".join(s.captions)
            lab = s.labels
            fh.write(f"{s.id}\t{s.ocr_text}\t{captions}\t{lab.mis}\t"
                     f"{lab.shm}\t{lab.ste}\t{lab.obj}\t{lab.vio}\n")
            write_ppm(os.path.join(image_dir, f"{s.id}.ppm"), s.image)


def ingest(dataset_path: str, image_dir: str | None = None) -> list[RawSample]:
    """Parse and validate a dataset TSV; returns samples in id order."""
    if image_dir is None:
        image_dir = os.path.join(os.path.dirname(dataset_path), "images")
    samples = []
    seen = set()
    with open(dataset_path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != TSV_HEADER:
            raise DataError(f"{dataset_path}:1: bad or missing header {header}")
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != len(TSV_HEADER):
                raise DataError(f"{dataset_path}:{lineno}: expected "
                                f"{len(TSV_HEADER)} columns, got {len(parts)}")
            sid, ocr, captions = parts[0], parts[1], parts[2]
            if sid in seen:
                raise DataError(f"{dataset_path}:{lineno}: duplicate id {sid}")
            seen.add(sid)
            try:
                labels = LabelVector(*(int(v) for v in parts[3:8]))
                labels.validate()
            except (ValueError, DataError) as exc:
                raise DataError(f"{dataset_path}:{lineno}: {exc}") from exc
            image_path = os.path.join(image_dir, f"{sid}.ppm")
            if not os.path.exists(image_path):
                raise DataError(f"missing image for sample {sid}: {image_path}")
            samples.append(RawSample(
                id=sid, ocr_text=ocr,
                captions=[c for c in captions.split("|") if c],
                image=read_ppm(image_path), labels=labels))
    samples.sort(key=lambda s: s.id)
    return samples


@dataclass
class RunConfig:
    """Every knob of the pipeline; round-trips through `key = value` files."""
    dataset: str = ""
    image_dir: str = ""
    out_dir: str = ""
    model: str = "gcan"
    setup: str = "B"
    folds: int = 10
    epochs: int = 50
    batch_size: int = 16
    fusion_batch_size: int = 32
    base_lr: float = 2e-5
    fusion_lr: float = 5e-6
    warmup_epochs: int = 4
    dropout: float = 0.5
    patience: int = 4
    loss_mix_l1: float = 0.7
    loss_mix_l2: float = 0.3
    seed: int = 0
    window_len: int = 10
    seq_len: int = 16
    resize: int = 36
    crop: int = 32
    patch: int = 8
    d_att: int = 32
    n_heads: int = 4
    n_layers: int = 3
    min_freq: int = 1
    max_vocab: int = 5000
    jobs: int = 1

    def validate(self) -> None:
        if self.model not in MODEL_MEMBERS:
            raise ValueError(f"unknown model {self.model!r}; choose from "
                             f"{sorted(MODEL_MEMBERS)}")
        if self.setup not in ("A", "B"):
            raise ValueError(f"setup must be A or B, got {self.setup!r}")


def emit_config(config: RunConfig) -> str:
    lines = ["# memefuse run configuration"]
    for f in fields(config):
        lines.append(f"{f.name} = {getattr(config, f.name)}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    kwargs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise DataError(f"config line {lineno}: unknown key {key!r}")
        caster = {"str": str, "int": int, "float": float}[types[key]]
        kwargs[key] = caster(value)
    return RunConfig(**kwargs)


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
